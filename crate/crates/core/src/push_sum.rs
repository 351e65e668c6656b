//! Push-Sum consensus in three regimes: delay-free, fixed delays and
//! bounded random delays.
//!
//! Each node keeps a sum `s` and a weight `w`; its estimate of the average
//! is `s / w`. Column-stochastic mixing conserves the totals of both
//! vectors, so the estimates converge to the true average no matter how the
//! delays scramble delivery. Senders decide the split of their outgoing
//! mass, which removes the occupancy bookkeeping of the row-stochastic
//! model: an empty delay node is simply one with weight zero.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fixed_delay::AugmentedSystem;
use crate::graph::DirectedGraph;
use crate::matrix::StochasticMatrix;
use crate::random_delay::{sample_step, uniform_pmf, validate_pmf, DelayChainLayout, StepRouting};
use crate::scalar::{real, to_f64, Scalar};
use crate::seeding::root_rng;

/// Estimates are masked where the weight sits below this floor.
pub const WEIGHT_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone)]
pub struct PushSumState<T: Scalar> {
    s: DVector<T>,
    w: DVector<T>,
    t: usize,
    compute_count: usize,
}

impl<T: Scalar> PushSumState<T> {
    /// `s = [x0; 0]`, `w = [1; 0]` over compute plus delay nodes.
    pub fn init(x0: &DVector<T>, delay_count: usize) -> Result<Self> {
        let n = x0.len();
        if n == 0 {
            return Err(Error::invalid("cannot run Push-Sum on zero nodes"));
        }
        let mut s = DVector::zeros(n + delay_count);
        let mut w = DVector::zeros(n + delay_count);
        for i in 0..n {
            s[i] = x0[i];
            w[i] = T::one();
        }
        Ok(PushSumState {
            s,
            w,
            t: 0,
            compute_count: n,
        })
    }

    pub fn s(&self) -> &DVector<T> {
        &self.s
    }

    pub fn w(&self) -> &DVector<T> {
        &self.w
    }

    pub fn time(&self) -> usize {
        self.t
    }

    pub fn compute_count(&self) -> usize {
        self.compute_count
    }

    pub fn dim(&self) -> usize {
        self.s.len()
    }

    /// `(sum of s, sum of w)`; invariant under column-stochastic updates.
    pub fn mass(&self) -> (T, T) {
        (
            self.s.iter().fold(T::zero(), |a, &x| a + x),
            self.w.iter().fold(T::zero(), |a, &x| a + x),
        )
    }

    /// Per-node estimate `s_i / w_i`, masked where the weight underflows.
    pub fn estimates(&self) -> Vec<Option<T>> {
        let floor = real::<T>(WEIGHT_FLOOR);
        self.s
            .iter()
            .zip(self.w.iter())
            .map(|(&s, &w)| if w > floor { Some(s / w) } else { None })
            .collect()
    }

    pub fn estimate(&self, i: usize) -> Option<T> {
        let floor = real::<T>(WEIGHT_FLOOR);
        (self.w[i] > floor).then(|| self.s[i] / self.w[i])
    }

    /// Max minus min of the compute-node estimates; infinite if any compute
    /// node currently has no estimate.
    pub fn compute_spread(&self) -> T {
        let mut lo = T::max_value().unwrap();
        let mut hi = -T::max_value().unwrap();
        for i in 0..self.compute_count {
            match self.estimate(i) {
                Some(e) => {
                    lo = lo.min(e);
                    hi = hi.max(e);
                }
                None => return T::max_value().unwrap(),
            }
        }
        hi - lo
    }

    /// Apply one column-stochastic transition.
    pub fn step_matrix(&mut self, m: &DMatrix<T>) {
        self.s = m * &self.s;
        self.w = m * &self.w;
        self.t += 1;
    }

    /// Fixed-delay step with an augmented column-stochastic system.
    pub fn step_fixed(&mut self, aug: &AugmentedSystem<T>) -> Result<()> {
        if !aug.matrix().is_column_stochastic() {
            return Err(Error::NotStochastic {
                expected: "column",
                detail: format!(
                    "Push-Sum needs a column-stochastic transition, got {}",
                    aug.matrix().tag().label()
                ),
            });
        }
        if aug.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "state has {} nodes, transition {}",
                self.dim(),
                aug.dim()
            )));
        }
        self.step_matrix(aug.matrix().as_matrix());
        Ok(())
    }
}

/// Column-stochastic transition for one random-delay step: the sender's
/// share `p[i][j]` for edge `(j, i)` rides either the direct entry or the
/// head of the sampled chain; tails always deliver and chains always shift,
/// so every column sums to exactly the sender's unit split.
pub fn build_transition_random<T: Scalar>(
    p: &StochasticMatrix<T>,
    routing: &StepRouting,
    layout: &DelayChainLayout,
) -> Result<DMatrix<T>> {
    if !p.is_column_stochastic() {
        return Err(Error::NotStochastic {
            expected: "column",
            detail: format!(
                "random-delay Push-Sum needs a column-stochastic protocol, got {}",
                p.tag().label()
            ),
        });
    }
    let n = layout.compute_count();
    if p.dim() != n {
        return Err(Error::Dimension(format!(
            "protocol is {}x{} but the layout has {n} compute nodes",
            p.dim(),
            p.dim()
        )));
    }
    if routing.chosen.len() != layout.edge_count() {
        return Err(Error::Dimension("routing sized wrongly".into()));
    }
    let b = layout.delay_node_count();
    let mut phat: DMatrix<T> = DMatrix::zeros(n + b, n + b);
    for j in 0..n {
        phat[(j, j)] = p.get(j, j);
    }
    for (r, &(j, i)) in layout.edges().iter().enumerate() {
        // edge (j, i): sender j, receiver i
        let share = p.get(i, j);
        match routing.chosen[r] {
            0 => phat[(i, j)] = share,
            k => phat[(layout.chain_head(r, k), j)] = share,
        }
        for k in 1..=layout.max_delay() {
            // fixed tail delivery and forward shifts
            phat[(i, layout.chain_tail(r, k))] = T::one();
            for pos in 1..k {
                phat[(
                    layout.node_index(r, k, pos + 1),
                    layout.node_index(r, k, pos),
                )] = T::one();
            }
        }
    }
    Ok(phat)
}

/// Diameter inflation check: the union graph with every chain present has
/// diameter at most `(B + 1) D + B + 1`.
#[derive(Debug, Clone, Copy)]
pub struct DiameterBound {
    pub diameter: usize,
    pub delayed_diameter: usize,
    pub bound: usize,
    pub ok: bool,
}

pub fn diameter_bound_check(graph: &DirectedGraph, max_delay: u32) -> Result<DiameterBound> {
    let d = graph.diameter()?;
    let layout = DelayChainLayout::new(graph, max_delay);
    let d_hat = layout.union_graph().diameter()?;
    let bound = (max_delay as usize + 1) * d + max_delay as usize + 1;
    Ok(DiameterBound {
        diameter: d,
        delayed_diameter: d_hat,
        bound,
        ok: d_hat <= bound,
    })
}

/// Improper ergodicity coefficient of one transposed block product:
/// `c(F) = 1 - max over compute columns s of (min_k F[k][s])`, evaluated on
/// the forward product `G` via `F = G^T`.
fn block_coefficient<T: Scalar>(forward_product: &DMatrix<T>, compute_count: usize) -> T {
    let mut best = T::zero();
    for s in 0..compute_count {
        let mut min = T::max_value().unwrap();
        for k in 0..forward_product.ncols() {
            min = min.min(forward_product[(s, k)]);
        }
        best = best.max(min);
    }
    T::one() - best
}

#[derive(Debug, Clone)]
pub struct ErgodicityReport<T: Scalar> {
    /// Window length used per block (number of transitions).
    pub window: usize,
    pub c_values: Vec<T>,
    /// `max c` over the blocks: the certified per-block contraction factor.
    pub geometric_rate_estimate: T,
    /// True iff every block had `c < 1`.
    pub all_contracting: bool,
}

/// Audit a recorded sequence of column-stochastic transitions: split into
/// consecutive blocks of `window` transitions (the delayed diameter plus
/// one), form each transposed product and check its ergodicity coefficient.
pub fn ergodicity_audit<T: Scalar>(
    transitions: &[DMatrix<T>],
    delayed_diameter: usize,
    compute_count: usize,
) -> Result<ErgodicityReport<T>> {
    let window = delayed_diameter + 1;
    if transitions.len() < window {
        return Err(Error::invalid(format!(
            "need at least {window} transitions for one block, got {}",
            transitions.len()
        )));
    }
    let dim = transitions[0].nrows();
    let mut c_values = Vec::new();
    for block in transitions.chunks_exact(window) {
        let mut acc = DMatrix::<T>::identity(dim, dim);
        for m in block {
            acc = sparse_mul(m, &acc);
        }
        c_values.push(block_coefficient(&acc, compute_count));
    }
    let rate = c_values.iter().fold(T::zero(), |a, &c| a.max(c));
    Ok(ErgodicityReport {
        window,
        all_contracting: c_values.iter().all(|&c| c < T::one()),
        c_values,
        geometric_rate_estimate: rate,
    })
}

/// `a * b` skipping zero entries of `a`; the per-step transitions have
/// O(dim) nonzeros so this keeps block products near O(dim^2).
fn sparse_mul<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let (rows, inner) = (a.nrows(), a.ncols());
    let cols = b.ncols();
    let mut out = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for k in 0..inner {
            let v = a[(i, k)];
            if v != T::zero() {
                for j in 0..cols {
                    out[(i, j)] += v * b[(k, j)];
                }
            }
        }
    }
    out
}

/// One recorded step of a Push-Sum run.
#[derive(Debug, Clone)]
pub struct PushSumFrame<T: Scalar> {
    pub t: usize,
    pub s: DVector<T>,
    pub w: DVector<T>,
}

#[derive(Debug, Clone)]
pub struct PushSumOutcome<T: Scalar> {
    pub estimates: Vec<Option<T>>,
    pub steps: usize,
    /// Worst `|sum s - sum x0|` seen at any step.
    pub mass_error_s: T,
    /// Worst `|sum w - n|` seen at any step.
    pub mass_error_w: T,
    pub ergodicity: Option<ErgodicityReport<T>>,
    /// Max compute-estimate error against the true average at each completed
    /// ergodicity block boundary (parallel to `ergodicity.c_values`).
    pub block_errors: Vec<T>,
}

/// A random-delay Push-Sum run.
#[derive(Debug, Clone)]
pub struct PushSumRun<T: Scalar> {
    protocol: StochasticMatrix<T>,
    layout: DelayChainLayout,
    pmf: Vec<f64>,
    rng: ChaCha8Rng,
    state: PushSumState<T>,
    target_mass: T,
    average: T,
    mass_error_s: T,
    mass_error_w: T,
    record: bool,
    trajectory: Vec<PushSumFrame<T>>,
    // ergodicity block accumulation
    audit_window: Option<usize>,
    block_acc: DMatrix<T>,
    block_len: usize,
    c_values: Vec<T>,
    block_errors: Vec<T>,
}

impl<T: Scalar> PushSumRun<T> {
    pub fn new(
        graph: &DirectedGraph,
        protocol: StochasticMatrix<T>,
        max_delay: u32,
        pmf: Option<Vec<f64>>,
        x0: DVector<T>,
        seed: u64,
    ) -> Result<Self> {
        if !protocol.is_column_stochastic() {
            return Err(Error::NotStochastic {
                expected: "column",
                detail: "Push-Sum needs a column-stochastic protocol".into(),
            });
        }
        if !protocol.respects(graph) {
            return Err(Error::invalid("protocol does not respect the graph"));
        }
        if !graph.is_strongly_connected() {
            return Err(Error::NotStronglyConnected);
        }
        let pmf = pmf.unwrap_or_else(|| uniform_pmf(max_delay));
        validate_pmf(&pmf, max_delay)?;
        let layout = DelayChainLayout::new(graph, max_delay);
        let state = PushSumState::init(&x0, layout.delay_node_count())?;
        let target_mass = x0.iter().fold(T::zero(), |a, &x| a + x);
        let dim = layout.dim();
        Ok(PushSumRun {
            protocol,
            layout,
            pmf,
            rng: root_rng(seed),
            state,
            target_mass,
            average: target_mass / real::<T>(x0.len() as f64),
            mass_error_s: T::zero(),
            mass_error_w: T::zero(),
            record: false,
            trajectory: Vec::new(),
            audit_window: None,
            block_acc: DMatrix::identity(dim, dim),
            block_len: 0,
            c_values: Vec::new(),
            block_errors: Vec::new(),
        })
    }

    pub fn record_trajectory(&mut self, on: bool) {
        self.record = on;
        if on && self.trajectory.is_empty() {
            self.trajectory.push(self.frame());
        }
    }

    /// Accumulate transposed block products of this window length (pass the
    /// delayed diameter plus one) and audit each block's contraction.
    pub fn audit_ergodicity(&mut self, window: usize) {
        self.audit_window = Some(window.max(1));
    }

    fn frame(&self) -> PushSumFrame<T> {
        PushSumFrame {
            t: self.state.time(),
            s: self.state.s().clone(),
            w: self.state.w().clone(),
        }
    }

    pub fn state(&self) -> &PushSumState<T> {
        &self.state
    }

    pub fn layout(&self) -> &DelayChainLayout {
        &self.layout
    }

    pub fn trajectory(&self) -> &[PushSumFrame<T>] {
        &self.trajectory
    }

    pub fn average(&self) -> T {
        self.average
    }

    fn max_compute_error(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.state.compute_count() {
            if let Some(e) = self.state.estimate(i) {
                worst = worst.max((e - self.average).abs());
            } else {
                worst = T::max_value().unwrap();
            }
        }
        worst
    }

    pub fn step(&mut self) -> Result<()> {
        let routing = sample_step(&self.layout, &mut self.rng, &self.pmf)?;
        let phat = build_transition_random(&self.protocol, &routing, &self.layout)?;
        self.state.step_matrix(&phat);
        let (ms, mw) = self.state.mass();
        self.mass_error_s = self.mass_error_s.max((ms - self.target_mass).abs());
        self.mass_error_w = self
            .mass_error_w
            .max((mw - real::<T>(self.state.compute_count() as f64)).abs());
        if let Some(window) = self.audit_window {
            self.block_acc = sparse_mul(&phat, &self.block_acc);
            self.block_len += 1;
            if self.block_len == window {
                self.c_values
                    .push(block_coefficient(&self.block_acc, self.state.compute_count()));
                self.block_errors.push(self.max_compute_error());
                let dim = self.layout.dim();
                self.block_acc = DMatrix::identity(dim, dim);
                self.block_len = 0;
            }
        }
        if self.record {
            self.trajectory.push(self.frame());
        }
        Ok(())
    }

    /// Worst mass deviations `(|sum s - target|, |sum w - n|)` seen so far.
    pub fn mass_errors(&self) -> (T, T) {
        (self.mass_error_s, self.mass_error_w)
    }

    /// The audit outcome at the current step (also returned by the run loops).
    pub fn outcome(&self) -> PushSumOutcome<T> {
        let ergodicity = self.audit_window.map(|window| {
            let rate = self.c_values.iter().fold(T::zero(), |a, &c| a.max(c));
            ErgodicityReport {
                window,
                all_contracting: self.c_values.iter().all(|&c| c < T::one()),
                c_values: self.c_values.clone(),
                geometric_rate_estimate: rate,
            }
        });
        PushSumOutcome {
            estimates: self.state.estimates(),
            steps: self.state.time(),
            mass_error_s: self.mass_error_s,
            mass_error_w: self.mass_error_w,
            ergodicity,
            block_errors: self.block_errors.clone(),
        }
    }

    /// Run until the compute-estimate spread stays below `tol` for `2B + 1`
    /// consecutive steps (hysteresis covers messages still in transit).
    pub fn run_to_consensus(&mut self, tol: T, max_steps: usize) -> Result<PushSumOutcome<T>> {
        let need = 2 * self.layout.max_delay() as usize + 1;
        let mut below = 0usize;
        while below < need {
            if self.state.time() >= max_steps {
                return Err(Error::NoConvergence {
                    iterations: self.state.time(),
                    residual: to_f64(self.state.compute_spread()),
                });
            }
            self.step()?;
            if self.state.compute_spread() < tol {
                below += 1;
            } else {
                below = 0;
            }
        }
        Ok(self.outcome())
    }

    /// Run a fixed number of steps.
    pub fn run_steps(&mut self, steps: usize) -> Result<PushSumOutcome<T>> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(self.outcome())
    }
}

/// Long-format Push-Sum trajectory CSV: `t,node,s,w,estimate`.
pub fn write_pushsum_csv<T: Scalar, W: Write>(
    trajectory: &[PushSumFrame<T>],
    mut writer: W,
) -> Result<()> {
    writeln!(writer, "t,node,s,w,estimate")?;
    let floor = real::<T>(WEIGHT_FLOOR);
    for frame in trajectory {
        for node in 0..frame.s.len() {
            let est = if frame.w[node] > floor {
                format!("{}", to_f64(frame.s[node] / frame.w[node]))
            } else {
                String::new()
            };
            writeln!(
                writer,
                "{},{},{},{},{}",
                frame.t,
                node,
                to_f64(frame.s[node]),
                to_f64(frame.w[node]),
                est
            )?;
        }
    }
    Ok(())
}
