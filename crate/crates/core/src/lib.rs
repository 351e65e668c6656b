//! Distributed averaging consensus under communication delays.
//!
//! A discrete-time simulator and spectral-analysis toolkit for consensus
//! protocols whose messages are delayed, either by a fixed amount per link
//! or by i.i.d. bounded random amounts per message. Delays are modelled by
//! augmenting the network with virtual relay nodes, which turns the delayed
//! protocol back into a linear update on a larger state space:
//!
//! - [`graph`], [`matrix`], [`spectral`]: directed graphs, tagged stochastic
//!   matrices, stationary distributions, second eigenvalues and the
//!   chain transforms (lazy, time reversal, additive reversibilization).
//! - [`fixed_delay`]: constant per-edge delays, the augmented protocol, its
//!   closed-form stationary distribution and average-recovering rescaling.
//! - [`poincare`]: canonical-path machinery bounding how much fixed delays
//!   can shrink the spectral gap.
//! - [`random_delay`]: the time-varying model with per-message random delays,
//!   its simulation, and runtime certificates for the product structure.
//! - [`push_sum`]: Push-Sum consensus in delay-free, fixed-delay and
//!   random-delay regimes, with mass-conservation and ergodicity audits.
//!
//! All numeric code is generic over the scalar via [`scalar::Scalar`]
//! (`f32` or `f64`); the crate-root aliases fix the default `f64` lane.

pub mod error;
pub mod fixed_delay;
pub mod graph;
pub mod matrix;
pub mod poincare;
pub mod push_sum;
pub mod random_delay;
pub mod scalar;
pub mod seeding;
pub mod spectral;

pub use error::{Error, Result};
pub use graph::DirectedGraph;
pub use matrix::{StochasticMatrix, Stochasticity};
pub use scalar::Scalar;

/// Default scalar type for the concrete aliases below.
pub type Real = f64;
/// A consensus protocol over `Real`.
pub type Protocol = StochasticMatrix<Real>;
/// A delay-augmented system over `Real`.
pub type Augmented = fixed_delay::AugmentedSystem<Real>;
/// Dense matrix over `Real`.
pub type Mat = nalgebra::DMatrix<Real>;
/// Dense vector over `Real`.
pub type Vector = nalgebra::DVector<Real>;

#[cfg(test)]
pub(crate) mod testing {
    //! Shared fixtures: the 3-node worked example used across the crate.
    //! Protocol entries are exact dyadic/6th fractions; the delayed variant
    //! carries a 2-step delay on the edge 0 -> 1.

    use crate::graph::DirectedGraph;
    use crate::matrix::{StochasticMatrix, Stochasticity};

    pub fn three_node_graph() -> DirectedGraph {
        DirectedGraph::from_edges(3, &[(0, 1), (0, 2), (1, 0), (1, 2), (2, 1)]).unwrap()
    }

    pub fn three_node_protocol() -> StochasticMatrix<f64> {
        StochasticMatrix::from_rows(
            3,
            &[
                2.0 / 3.0,
                1.0 / 3.0,
                0.0,
                1.0 / 6.0,
                1.0 / 3.0,
                0.5,
                1.0 / 6.0,
                1.0 / 3.0,
                0.5,
            ],
            Stochasticity::Doubly,
        )
        .unwrap()
    }

    /// The 5-node augmentation of `three_node_protocol` with a 2-step delay
    /// on edge 0 -> 1 (receiver weight 1/6 moves to the chain tail).
    pub fn three_node_delayed() -> StochasticMatrix<f64> {
        StochasticMatrix::from_rows(
            5,
            &[
                2.0 / 3.0,
                1.0 / 3.0,
                0.0,
                0.0,
                0.0,
                //
                0.0,
                1.0 / 3.0,
                0.5,
                0.0,
                1.0 / 6.0,
                //
                1.0 / 6.0,
                1.0 / 3.0,
                0.5,
                0.0,
                0.0,
                //
                1.0,
                0.0,
                0.0,
                0.0,
                0.0,
                //
                0.0,
                0.0,
                0.0,
                1.0,
                0.0,
            ],
            Stochasticity::Row,
        )
        .unwrap()
    }
}
