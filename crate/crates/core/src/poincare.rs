//! Canonical-path machinery: the Poincaré constant of a chain, the
//! polynomial factor by which fixed delays can inflate it, the resulting
//! spectral-gap bound for the delayed protocol, and the inverse-spectral-gap
//! sweep over the maximum delay.
//!
//! Canonical paths live on the walk support of the protocol: a path step
//! `v -> w` requires `p[v][w] > 0` (a transition of the chain driven by the
//! matrix rows). Use [`StochasticMatrix::walk_support`] to build that graph.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fixed_delay::{augment_row, closed_form_stationary, AugmentedSystem, DelayAssignment};
use crate::graph::DirectedGraph;
use crate::matrix::{StochasticMatrix, Stochasticity};
use crate::scalar::{real, to_f64, Scalar};
use crate::seeding::derived_rng;
use crate::spectral::{lazy, second_eigenvalue_reversible, additive_reversibilization};

/// One directed path per ordered node pair.
#[derive(Debug, Clone)]
pub struct CanonicalPathSet {
    n: usize,
    paths: Vec<Option<Vec<usize>>>,
}

impl CanonicalPathSet {
    pub fn node_count(&self) -> usize {
        self.n
    }

    /// The stored path from `x` to `y` as a node sequence (inclusive).
    pub fn path(&self, x: usize, y: usize) -> Option<&[usize]> {
        self.paths[x * self.n + y].as_deref()
    }

    /// Path length in edges.
    pub fn len(&self, x: usize, y: usize) -> Option<usize> {
        self.path(x, y).map(|p| p.len() - 1)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, &[usize])> {
        let n = self.n;
        self.paths
            .iter()
            .enumerate()
            .filter_map(move |(idx, p)| p.as_deref().map(|p| (idx / n, idx % n, p)))
    }
}

/// BFS shortest paths for every ordered pair, deterministic via
/// lowest-next-node tie-breaking.
pub fn shortest_canonical_paths(graph: &DirectedGraph) -> Result<CanonicalPathSet> {
    if !graph.is_strongly_connected() {
        return Err(Error::NotStronglyConnected);
    }
    let n = graph.node_count();
    let mut paths = vec![None; n * n];
    for x in 0..n {
        let mut parent: Vec<Option<usize>> = vec![None; n];
        let mut dist: Vec<Option<usize>> = vec![None; n];
        let mut queue = std::collections::VecDeque::new();
        dist[x] = Some(0);
        queue.push_back(x);
        while let Some(u) = queue.pop_front() {
            let mut nbrs: Vec<usize> = graph.out_neighbors(u).to_vec();
            nbrs.sort_unstable();
            for v in nbrs {
                if dist[v].is_none() {
                    dist[v] = Some(dist[u].unwrap() + 1);
                    parent[v] = Some(u);
                    queue.push_back(v);
                }
            }
        }
        for y in 0..n {
            if y == x {
                continue;
            }
            let mut rev = vec![y];
            let mut cur = y;
            while let Some(p) = parent[cur] {
                rev.push(p);
                cur = p;
            }
            rev.reverse();
            debug_assert_eq!(rev[0], x);
            paths[x * n + y] = Some(rev);
        }
    }
    Ok(CanonicalPathSet { n, paths })
}

#[derive(Debug, Clone)]
pub struct PoincareReport<T: Scalar> {
    /// The Poincaré constant `K`.
    pub k: T,
    /// The arg-max edge `(v, w)`; `None` in the degenerate single-node case.
    pub bottleneck_edge: Option<(usize, usize)>,
    /// `1 - 1/K`; `None` when `K = 0` (nothing to bound).
    pub lambda2_bound: Option<T>,
}

/// The Poincaré constant
/// `K = max_e (1 / (pi_v p_vw)) sum_{paths through e} |path| pi_x pi_y`,
/// with the maximizing edge reported (ties broken to the lowest `(v, w)`).
pub fn poincare_constant<T: Scalar>(
    p: &StochasticMatrix<T>,
    pi: &DVector<T>,
    paths: &CanonicalPathSet,
) -> Result<PoincareReport<T>> {
    let n = p.dim();
    if paths.node_count() != n || pi.len() != n {
        return Err(Error::Dimension(
            "protocol, stationary vector and path set must agree on the node count".into(),
        ));
    }
    if n == 1 {
        return Ok(PoincareReport {
            k: T::zero(),
            bottleneck_edge: None,
            lambda2_bound: None,
        });
    }
    let mut load: DMatrix<T> = DMatrix::zeros(n, n);
    for (x, y, path) in paths.pairs() {
        let length = real::<T>((path.len() - 1) as f64);
        let weight = length * pi[x] * pi[y];
        for e in path.windows(2) {
            let (v, w) = (e[0], e[1]);
            if p.get(v, w) <= T::zero() {
                return Err(Error::invalid(format!(
                    "canonical path {x} -> {y} uses the zero-weight transition ({v}, {w})"
                )));
            }
            load[(v, w)] += weight;
        }
    }
    let mut best: Option<((usize, usize), T)> = None;
    for v in 0..n {
        for w in 0..n {
            if load[(v, w)] > T::zero() {
                let value = load[(v, w)] / (pi[v] * p.get(v, w));
                let better = match &best {
                    None => true,
                    Some((_, cur)) => value > *cur,
                };
                if better {
                    best = Some(((v, w), value));
                }
            }
        }
    }
    match best {
        Some((edge, k)) => Ok(PoincareReport {
            k,
            bottleneck_edge: Some(edge),
            lambda2_bound: Some(T::one() - T::one() / k),
        }),
        None => Ok(PoincareReport {
            k: T::zero(),
            bottleneck_edge: None,
            lambda2_bound: None,
        }),
    }
}

/// Inputs to the delay-inflation polynomial.
#[derive(Debug, Clone, Copy)]
pub struct ZFactorInputs<T: Scalar> {
    /// `p`, the largest off-diagonal protocol entry.
    pub p_max: T,
    /// Weight of the bottleneck edge `(v, w)`.
    pub p_vw: T,
    /// Maximum undirected degree ignoring self-loops.
    pub d_max: usize,
    /// `(n + sum_r b_r w_r) / n`, the stationary normalizer over `n`.
    pub c: T,
    /// `B`, the maximum delay.
    pub max_delay: u32,
}

/// The delay-inflation factor
/// `Z = (p_vw / 4c) [p^2 (2d^2+3d+1) B^3 + p (2pd^2+2pd+8d+6) B^2 + (8pd+p+8) B + 8]`.
pub fn z_factor<T: Scalar>(inp: &ZFactorInputs<T>) -> T {
    let p = inp.p_max;
    let d = real::<T>(inp.d_max as f64);
    let b = real::<T>(inp.max_delay as f64);
    let b2 = b * b;
    let b3 = b2 * b;
    let c3 = p * p * (real::<T>(2.0) * d * d + real::<T>(3.0) * d + T::one());
    let c2 = p
        * (real::<T>(2.0) * p * d * d
            + real::<T>(2.0) * p * d
            + real::<T>(8.0) * d
            + real::<T>(6.0));
    let c1 = real::<T>(8.0) * p * d + p + real::<T>(8.0);
    let bracket = c3 * b3 + c2 * b2 + c1 * b + real::<T>(8.0);
    inp.p_vw / (real::<T>(4.0) * inp.c) * bracket
}

/// Assemble [`ZFactorInputs`] from a protocol, its graph, a delay assignment
/// and an already-computed Poincaré report.
pub fn z_inputs<T: Scalar>(
    p: &StochasticMatrix<T>,
    graph: &DirectedGraph,
    delays: &DelayAssignment,
    report: &PoincareReport<T>,
) -> Result<ZFactorInputs<T>> {
    let (v, w) = report
        .bottleneck_edge
        .ok_or_else(|| Error::invalid("degenerate path set has no bottleneck edge"))?;
    let n = graph.node_count();
    let mut weighted = T::zero();
    for (r, &(i, j)) in graph.edges().iter().enumerate() {
        weighted += real::<T>(delays.get(r) as f64) * p.get(j, i);
    }
    let c = (real::<T>(n as f64) + weighted) / real::<T>(n as f64);
    Ok(ZFactorInputs {
        p_max: p.max_off_diagonal(),
        p_vw: p.get(v, w),
        d_max: graph.max_undirected_degree(),
        c,
        max_delay: delays.max_delay(),
    })
}

/// The delayed Poincaré bound `Z * K`: adding the given fixed delays to a
/// doubly stochastic protocol leaves the lazy-reversibilized second
/// eigenvalue at most `1 - 1/(Z K)`.
pub fn delayed_bound<T: Scalar>(
    p: &StochasticMatrix<T>,
    pi: &DVector<T>,
    paths: &CanonicalPathSet,
    delays: &DelayAssignment,
    graph: &DirectedGraph,
) -> Result<T> {
    if p.tag() != Stochasticity::Doubly {
        return Err(Error::NotStochastic {
            expected: "doubly",
            detail: "the delayed Poincaré bound is stated for doubly stochastic protocols".into(),
        });
    }
    let report = poincare_constant(p, pi, paths)?;
    let inputs = z_inputs(p, graph, delays, &report)?;
    Ok(z_factor(&inputs) * report.k)
}

/// Per-term breakdown of the nine path families behind the `Z` polynomial,
/// each evaluated at the worst case (all half-chain extents at `B`).
///
/// The terms sum to slightly more than the closed form: the linear-in-`B`
/// coefficient of the summed bracket is `8 + 4p + 8pd` versus `8 + p + 8pd`
/// in `Z`, so `sum - closed_form = (p_vw / 4c) * 3pB * K` exactly. The
/// closed form is the binding contract; the breakdown is a diagnostic.
#[derive(Debug, Clone)]
pub struct NineTermDiagnostic<T: Scalar> {
    pub terms: [T; 9],
    pub sum: T,
    pub closed_form: T,
}

pub fn nine_term_diagnostic<T: Scalar>(
    p: &StochasticMatrix<T>,
    pi: &DVector<T>,
    paths: &CanonicalPathSet,
    delays: &DelayAssignment,
    graph: &DirectedGraph,
) -> Result<NineTermDiagnostic<T>> {
    let report = poincare_constant(p, pi, paths)?;
    let inputs = z_inputs(p, graph, delays, &report)?;
    let pm = inputs.p_max;
    let d = real::<T>(inputs.d_max as f64);
    let b = real::<T>(inputs.max_delay as f64);
    let b2 = b * b;
    let b3 = b2 * b;
    let eighth = real::<T>(0.125);
    let quarter = real::<T>(0.25);
    let coeffs = [
        b + T::one(),
        pm * (real::<T>(3.0) * b2 + real::<T>(2.0) * b) * eighth,
        pm * d * (real::<T>(5.0) * b2 + real::<T>(6.0) * b) * eighth,
        pm * pm * d * b3 * eighth,
        pm * d * (real::<T>(3.0) * b2 + real::<T>(2.0) * b) * eighth,
        pm * pm * d * d * (b3 + b2) * quarter,
        pm * pm * b3 * eighth,
        pm * (real::<T>(3.0) * b2 + real::<T>(2.0) * b) * eighth,
        pm * pm * d * (b3 + b2) * quarter,
    ];
    let leading = real::<T>(2.0) * inputs.p_vw / inputs.c;
    let mut terms = [T::zero(); 9];
    let mut sum = T::zero();
    for (slot, coeff) in terms.iter_mut().zip(coeffs) {
        *slot = coeff * leading * report.k;
        sum += *slot;
    }
    Ok(NineTermDiagnostic {
        terms,
        sum,
        closed_form: z_factor(&inputs) * report.k,
    })
}

/// The chain edge inspected by the diagnostics: for the chain replacing
/// `edge_index` (length `B'`), the pair at positions `floor(B'/2)` and
/// `floor(B'/2) + 1`, where position 0 is the sender and position `B' + 1`
/// the receiver. Indices are in the augmented system. `None` if undelayed.
pub fn middle_chain_edge<T: Scalar>(
    aug: &AugmentedSystem<T>,
    edge_index: usize,
) -> Option<(usize, usize)> {
    let b_r = aug.delays()[edge_index] as usize;
    if b_r == 0 {
        return None;
    }
    let (sender, receiver) = aug.index_map()
        [aug.delay_node_index(edge_index, 1).unwrap() - aug.compute_count()]
    .edge;
    let k = b_r / 2;
    let from = if k == 0 {
        sender
    } else {
        aug.delay_node_index(edge_index, k).unwrap()
    };
    let to = if k + 1 > b_r {
        receiver
    } else {
        aug.delay_node_index(edge_index, k + 1).unwrap()
    };
    Some((from, to))
}

/// One point of the inverse-spectral-gap sweep.
#[derive(Debug, Clone, Copy)]
pub struct GapPoint<T: Scalar> {
    pub max_delay: u32,
    pub max_inverse_gap: T,
}

/// For each `B` in `b_values`, draw `trials` random delay assignments with
/// per-edge delays uniform on `{0..B}`, build the lazy-reversibilized
/// augmented chain and record the worst inverse spectral gap
/// `1 / (1 - lambda2(U))`. Deterministic given `seed`; trials run in
/// parallel and merge in trial order.
pub fn inverse_gap_experiment<T: Scalar + Send + Sync>(
    graph: &DirectedGraph,
    p: &StochasticMatrix<T>,
    b_values: &[u32],
    trials: usize,
    seed: u64,
) -> Result<Vec<GapPoint<T>>> {
    if p.tag() != Stochasticity::Doubly {
        return Err(Error::NotStochastic {
            expected: "doubly",
            detail: "the inverse-gap sweep needs a doubly stochastic protocol".into(),
        });
    }
    if trials == 0 {
        return Err(Error::invalid("trials must be positive"));
    }
    let mut out = Vec::with_capacity(b_values.len());
    for &b in b_values {
        let gaps: Result<Vec<T>> = (0..trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = derived_rng(seed, &[b as u64, trial as u64]);
                let delays = DelayAssignment::uniform_random(graph, b, &mut rng);
                inverse_gap_of(p, &delays, graph)
            })
            .collect();
        let max = gaps?
            .into_iter()
            .fold(T::zero(), |acc, g| if g > acc { g } else { acc });
        out.push(GapPoint {
            max_delay: b,
            max_inverse_gap: max,
        });
    }
    Ok(out)
}

/// `1 / (1 - lambda2(U(lazy(augmented))))` for one delay assignment.
pub fn inverse_gap_of<T: Scalar>(
    p: &StochasticMatrix<T>,
    delays: &DelayAssignment,
    graph: &DirectedGraph,
) -> Result<T> {
    let aug = augment_row(p, delays, graph)?;
    let lazy_aug = lazy(aug.matrix())?;
    let pi = closed_form_stationary(p, delays, graph)?.full_vector();
    let u = additive_reversibilization(&lazy_aug, &pi)?;
    let lambda2 = second_eigenvalue_reversible(u.as_matrix(), &pi)?;
    Ok(T::one() / (T::one() - lambda2))
}

/// Least-squares fit of `a * B^2` through the sweep and its relative
/// residual `||y - a B^2|| / ||y||`.
pub fn fit_quadratic<T: Scalar>(points: &[GapPoint<T>]) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for pt in points {
        let b2 = (pt.max_delay as f64).powi(2);
        num += b2 * to_f64(pt.max_inverse_gap);
        den += b2 * b2;
    }
    let a = if den > 0.0 { num / den } else { 0.0 };
    let mut res = 0.0;
    let mut norm = 0.0;
    for pt in points {
        let y = to_f64(pt.max_inverse_gap);
        let f = a * (pt.max_delay as f64).powi(2);
        res += (y - f) * (y - f);
        norm += y * y;
    }
    (a, if norm > 0.0 { (res / norm).sqrt() } else { 0.0 })
}
