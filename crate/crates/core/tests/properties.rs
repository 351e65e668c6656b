//! Property tests over randomly structured instances: stochasticity is
//! preserved by every transform, relays have the pure-relay shape, and the
//! text formats round-trip.

use nalgebra::DMatrix;
use proptest::prelude::*;

use delay_consensus::fixed_delay::{augment_column, augment_row, DelayAssignment};
use delay_consensus::graph::DirectedGraph;
use delay_consensus::matrix::{StochasticMatrix, Stochasticity};
use delay_consensus::random_delay::{
    build_transition, sample_step, uniform_pmf, DelayChainLayout,
};
use delay_consensus::push_sum::build_transition_random;
use delay_consensus::seeding::derived_rng;
use delay_consensus::spectral::{lazy, stationary_distribution, time_reversal};

/// A strongly connected digraph on 2..=5 nodes: a directed cycle plus
/// arbitrary extra edges.
fn arb_graph() -> impl Strategy<Value = DirectedGraph> {
    (2usize..=5, proptest::collection::vec(any::<bool>(), 25)).prop_map(|(n, bits)| {
        let mut g = DirectedGraph::new(n);
        for i in 0..n {
            g.add_edge(i, (i + 1) % n).unwrap();
        }
        let mut k = 0;
        for s in 0..n {
            for r in 0..n {
                if s != r && !g.has_edge(s, r) {
                    if bits[k % bits.len()] {
                        g.add_edge(s, r).unwrap();
                    }
                    k += 1;
                }
            }
        }
        g
    })
}

fn arb_instance() -> impl Strategy<Value = (DirectedGraph, Vec<f64>, Vec<u32>)> {
    arb_graph().prop_flat_map(|g| {
        let n = g.node_count();
        let m = g.edge_count();
        (
            Just(g),
            proptest::collection::vec(0.01..1.0f64, n * (n + 1)),
            proptest::collection::vec(0u32..=4, m),
        )
    })
}

/// Row-stochastic protocol on the graph support built from raw weights.
fn row_protocol(graph: &DirectedGraph, weights: &[f64]) -> StochasticMatrix<f64> {
    let n = graph.node_count();
    let mut data = DMatrix::<f64>::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        data[(i, i)] = weights[k % weights.len()];
        k += 1;
        for &j in graph.in_neighbors(i) {
            data[(i, j)] = weights[k % weights.len()];
            k += 1;
        }
        let s: f64 = data.row(i).iter().sum();
        for j in 0..n {
            data[(i, j)] /= s;
        }
    }
    StochasticMatrix::new(data, Stochasticity::Row).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn row_augmentation_keeps_rows_stochastic_and_relays_pure(
        (graph, weights, delays) in arb_instance()
    ) {
        let p = row_protocol(&graph, &weights);
        let d = DelayAssignment::from_per_edge(&graph, delays).unwrap();
        let aug = augment_row(&p, &d, &graph).unwrap();
        let n = graph.node_count();
        for i in 0..aug.dim() {
            let row_sum: f64 = aug.matrix().as_matrix().row(i).iter().sum();
            prop_assert!((row_sum - 1.0).abs() <= 1e-12, "row {i} sums to {row_sum}");
            if i >= n {
                let nonzero: Vec<f64> = aug.matrix().as_matrix().row(i).iter()
                    .copied().filter(|&x| x != 0.0).collect();
                prop_assert_eq!(nonzero, vec![1.0]);
                prop_assert_eq!(aug.matrix().get(i, i), 0.0);
            }
        }
        // all-zero delays reproduce the protocol exactly
        let zero = augment_row(&p, &DelayAssignment::zero(&graph), &graph).unwrap();
        prop_assert_eq!(zero.matrix().as_matrix(), p.as_matrix());
    }

    #[test]
    fn transforms_preserve_stationarity(
        (graph, weights, _) in arb_instance()
    ) {
        let p = row_protocol(&graph, &weights);
        let pi = stationary_distribution(&p).unwrap();
        let lz = lazy(&p).unwrap();
        let pi_lazy = stationary_distribution(&lz).unwrap();
        for i in 0..pi.len() {
            prop_assert!((pi[i] - pi_lazy[i]).abs() < 1e-9);
        }
        let rev = time_reversal(&p, &pi).unwrap();
        let piv = &pi.transpose() * rev.as_matrix();
        for i in 0..pi.len() {
            prop_assert!((piv[(0, i)] - pi[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn column_augmentation_and_random_transitions_keep_columns_stochastic(
        (graph, weights, delays) in arb_instance()
    ) {
        // transpose of a row protocol on the reversed graph is column on this one
        let p = row_protocol(&graph, &weights);
        let q = p.transpose();
        let mut reversed = DirectedGraph::new(graph.node_count());
        for &(s, r) in graph.edges() {
            reversed.add_edge(r, s).unwrap();
        }
        let d = DelayAssignment::from_per_edge(&reversed, delays).unwrap();
        let aug = augment_column(&q, &d, &reversed).unwrap();
        for j in 0..aug.dim() {
            let col_sum: f64 = aug.matrix().as_matrix().column(j).iter().sum();
            prop_assert!((col_sum - 1.0).abs() <= 1e-12, "column {j} sums to {col_sum}");
        }

        let layout = DelayChainLayout::new(&reversed, 3);
        let mut rng = derived_rng(7, &[layout.edge_count() as u64]);
        let routing = sample_step(&layout, &mut rng, &uniform_pmf(3)).unwrap();
        let phat = build_transition_random(&q, &routing, &layout).unwrap();
        for j in 0..phat.ncols() {
            let col_sum: f64 = phat.column(j).iter().sum();
            prop_assert!((col_sum - 1.0).abs() <= 1e-12, "column {j} sums to {col_sum}");
        }
    }

    #[test]
    fn random_delay_transition_rows_sum_to_one_or_zero(
        (graph, weights, _) in arb_instance()
    ) {
        let p = row_protocol(&graph, &weights);
        let layout = DelayChainLayout::new(&graph, 2);
        let mut rng = derived_rng(11, &[graph.edge_count() as u64]);
        let pmf = uniform_pmf(2);
        let mut occupancy = vec![false; layout.delay_node_count()];
        for _ in 0..5 {
            let routing = sample_step(&layout, &mut rng, &pmf).unwrap();
            let snap = build_transition(&p, &routing, &occupancy, &layout).unwrap();
            for i in 0..snap.phat.nrows() {
                let s: f64 = snap.phat.row(i).iter().sum();
                prop_assert!(
                    s == 0.0 || (s - 1.0).abs() <= 1e-13,
                    "row {i} sums to {s}"
                );
            }
            occupancy = delay_consensus::random_delay::advance_occupancy(
                &occupancy, &routing, &layout,
            );
        }
    }

    #[test]
    fn matrix_csv_round_trips_exactly(
        (graph, weights, _) in arb_instance()
    ) {
        let p = row_protocol(&graph, &weights);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back = StochasticMatrix::<f64>::read_csv(&buf[..], Stochasticity::Row).unwrap();
        prop_assert_eq!(p.as_matrix(), back.as_matrix());
    }

    #[test]
    fn graph_edge_list_round_trips(graph in arb_graph()) {
        let mut buf = Vec::new();
        graph.write_edge_list(&mut buf).unwrap();
        let back = DirectedGraph::read_edge_list(&buf[..]).unwrap();
        prop_assert_eq!(graph, back);
    }
}
