//! Fixed communication delays: every regular edge `(i, j)` carries a constant
//! delay `b_r`, modelled by a relay chain of `b_r` virtual delay nodes. Builds
//! the augmented protocol in row- and column-stochastic form, the closed-form
//! stationary distribution for doubly stochastic protocols, and the rescaling
//! that recovers the average under a non-uniform stationary distribution.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::DirectedGraph;
use crate::matrix::{StochasticMatrix, Stochasticity};
use crate::scalar::{real, Scalar};

/// Per-edge fixed delays, parallel to `graph.edges()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayAssignment {
    delays: Vec<u32>,
}

impl DelayAssignment {
    pub fn zero(graph: &DirectedGraph) -> Self {
        DelayAssignment {
            delays: vec![0; graph.edge_count()],
        }
    }

    pub fn from_per_edge(graph: &DirectedGraph, delays: Vec<u32>) -> Result<Self> {
        if delays.len() != graph.edge_count() {
            return Err(Error::Dimension(format!(
                "expected {} per-edge delays, got {}",
                graph.edge_count(),
                delays.len()
            )));
        }
        Ok(DelayAssignment { delays })
    }

    /// Build from `(sender, receiver, delay)` triples; edges not mentioned get
    /// delay 0. Unknown edges and negative delays are rejected.
    pub fn from_pairs(graph: &DirectedGraph, pairs: &[(usize, usize, i64)]) -> Result<Self> {
        let mut delays = vec![0u32; graph.edge_count()];
        for &(s, r, d) in pairs {
            if d < 0 {
                return Err(Error::invalid(format!(
                    "negative delay {d} on edge ({s}, {r})"
                )));
            }
            let idx = graph.edge_index(s, r).ok_or_else(|| {
                Error::invalid(format!("delay on edge ({s}, {r}) absent from graph"))
            })?;
            delays[idx] = d as u32;
        }
        Ok(DelayAssignment { delays })
    }

    /// Independent uniform draws on `{0, ..., max_delay}` per edge, in edge order.
    pub fn uniform_random<R: Rng>(graph: &DirectedGraph, max_delay: u32, rng: &mut R) -> Self {
        let delays = graph
            .edges()
            .iter()
            .map(|_| rng.random_range(0..=max_delay))
            .collect();
        DelayAssignment { delays }
    }

    pub fn delays(&self) -> &[u32] {
        &self.delays
    }

    pub fn get(&self, edge_index: usize) -> u32 {
        self.delays[edge_index]
    }

    /// `B`, the maximum delay over all edges.
    pub fn max_delay(&self) -> u32 {
        self.delays.iter().copied().max().unwrap_or(0)
    }

    /// `b`, the total number of delay nodes.
    pub fn total_delay_nodes(&self) -> usize {
        self.delays.iter().map(|&d| d as usize).sum()
    }

    /// Text format: one line `sender receiver delay` per edge.
    pub fn read_text<R: BufRead>(graph: &DirectedGraph, reader: R) -> Result<Self> {
        let mut pairs = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let mut next = |what: &str| -> Result<i64> {
                it.next()
                    .ok_or_else(|| Error::parse(format!("missing {what}")))?
                    .parse::<i64>()
                    .map_err(|e| Error::parse(format!("bad {what}: {e}")))
            };
            let s = next("sender")?;
            let r = next("receiver")?;
            let d = next("delay")?;
            if s < 0 || r < 0 {
                return Err(Error::parse("negative node index"));
            }
            pairs.push((s as usize, r as usize, d));
        }
        Self::from_pairs(graph, &pairs)
    }

    pub fn write_text<W: Write>(&self, graph: &DirectedGraph, mut writer: W) -> Result<()> {
        for (r, &(s, t)) in graph.edges().iter().enumerate() {
            writeln!(writer, "{s} {t} {}", self.delays[r])?;
        }
        Ok(())
    }
}

/// Where a delay node sits: on which edge's chain and at which position
/// (1 = head, fed by the sender; `b_r` = tail, feeding the receiver).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DelayNodeInfo {
    pub edge: (usize, usize),
    pub edge_index: usize,
    pub position: usize,
}

/// The delay-augmented protocol plus the bijection between delay-node
/// indices `n..n+b` and `(edge, position)` chain coordinates.
#[derive(Debug, Clone)]
pub struct AugmentedSystem<T: Scalar> {
    matrix: StochasticMatrix<T>,
    index_map: Vec<DelayNodeInfo>,
    compute_count: usize,
    edge_offsets: Vec<usize>,
    delays: Vec<u32>,
}

impl<T: Scalar> AugmentedSystem<T> {
    pub fn matrix(&self) -> &StochasticMatrix<T> {
        &self.matrix
    }

    pub fn compute_count(&self) -> usize {
        self.compute_count
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn delay_count(&self) -> usize {
        self.index_map.len()
    }

    pub fn index_map(&self) -> &[DelayNodeInfo] {
        &self.index_map
    }

    pub fn delays(&self) -> &[u32] {
        &self.delays
    }

    /// Absolute index of the delay node at `position` (1-based) on the chain
    /// of `edge_index`, if that chain is long enough.
    pub fn delay_node_index(&self, edge_index: usize, position: usize) -> Option<usize> {
        if position == 0 || position > self.delays[edge_index] as usize {
            return None;
        }
        Some(self.compute_count + self.edge_offsets[edge_index] + position - 1)
    }

    /// Support graph of the augmented matrix in communication orientation.
    pub fn support_graph(&self) -> DirectedGraph {
        self.matrix.communication_support()
    }

    /// JSON index map `{delay_node_index: {edge: [i, j], position: k}}`.
    pub fn index_map_json(&self) -> serde_json::Value {
        let mut map = BTreeMap::new();
        for (local, info) in self.index_map.iter().enumerate() {
            map.insert((self.compute_count + local).to_string(), info);
        }
        serde_json::to_value(map).expect("index map serializes")
    }
}

fn check_common<T: Scalar>(
    p: &StochasticMatrix<T>,
    delays: &DelayAssignment,
    graph: &DirectedGraph,
) -> Result<()> {
    if p.dim() != graph.node_count() {
        return Err(Error::Dimension(format!(
            "protocol is {}x{} but graph has {} nodes",
            p.dim(),
            p.dim(),
            graph.node_count()
        )));
    }
    if delays.delays().len() != graph.edge_count() {
        return Err(Error::Dimension(format!(
            "delay assignment covers {} edges, graph has {}",
            delays.delays().len(),
            graph.edge_count()
        )));
    }
    if !p.respects(graph) {
        return Err(Error::invalid(
            "protocol does not respect the graph (weight on a missing edge)",
        ));
    }
    Ok(())
}

fn build_index_map(
    graph: &DirectedGraph,
    delays: &DelayAssignment,
) -> (Vec<DelayNodeInfo>, Vec<usize>) {
    let mut index_map = Vec::with_capacity(delays.total_delay_nodes());
    let mut offsets = Vec::with_capacity(graph.edge_count());
    let mut offset = 0usize;
    for (r, &edge) in graph.edges().iter().enumerate() {
        offsets.push(offset);
        let b_r = delays.get(r) as usize;
        for position in 1..=b_r {
            index_map.push(DelayNodeInfo {
                edge,
                edge_index: r,
                position,
            });
        }
        offset += b_r;
    }
    (index_map, offsets)
}

/// Row-stochastic augmentation: for each delayed edge `(i, j)` the receiver
/// weight `p[j][i]` moves to the chain tail's column, the chain head pulls
/// from the sender with weight 1 and interior nodes relay with weight 1.
/// Setting every delay to 0 returns the protocol unchanged.
pub fn augment_row<T: Scalar>(
    p: &StochasticMatrix<T>,
    delays: &DelayAssignment,
    graph: &DirectedGraph,
) -> Result<AugmentedSystem<T>> {
    if !p.is_row_stochastic() {
        return Err(Error::NotStochastic {
            expected: "row",
            detail: format!("augment_row needs a row-stochastic tag, got {}", p.tag().label()),
        });
    }
    check_common(p, delays, graph)?;
    let n = graph.node_count();
    let b = delays.total_delay_nodes();
    let (index_map, edge_offsets) = build_index_map(graph, delays);
    let mut data: DMatrix<T> = DMatrix::zeros(n + b, n + b);
    data.view_mut((0, 0), (n, n)).copy_from(p.as_matrix());
    for (r, &(i, j)) in graph.edges().iter().enumerate() {
        let b_r = delays.get(r) as usize;
        if b_r == 0 {
            continue;
        }
        let base = n + edge_offsets[r];
        let weight = p.get(j, i);
        data[(j, i)] = T::zero();
        data[(j, base + b_r - 1)] = weight; // receiver pulls from the tail
        data[(base, i)] = T::one(); // head pulls from the sender
        for k in 1..b_r {
            data[(base + k, base + k - 1)] = T::one();
        }
    }
    let tag = if b == 0 { p.tag() } else { Stochasticity::Row };
    Ok(AugmentedSystem {
        matrix: StochasticMatrix::new(data, tag)?,
        index_map,
        compute_count: n,
        edge_offsets,
        delays: delays.delays().to_vec(),
    })
}

/// Column-stochastic augmentation for Push-Sum: for each delayed edge
/// `(i, j)` the sender share `p[j][i]` moves to the chain head's row, the
/// chain relays forward with weight 1 and the tail delivers to the receiver
/// with weight 1. Columns remain stochastic.
pub fn augment_column<T: Scalar>(
    p: &StochasticMatrix<T>,
    delays: &DelayAssignment,
    graph: &DirectedGraph,
) -> Result<AugmentedSystem<T>> {
    if !p.is_column_stochastic() {
        return Err(Error::NotStochastic {
            expected: "column",
            detail: format!("augment_column needs a column-stochastic tag, got {}", p.tag().label()),
        });
    }
    check_common(p, delays, graph)?;
    let n = graph.node_count();
    let b = delays.total_delay_nodes();
    let (index_map, edge_offsets) = build_index_map(graph, delays);
    let mut data: DMatrix<T> = DMatrix::zeros(n + b, n + b);
    data.view_mut((0, 0), (n, n)).copy_from(p.as_matrix());
    for (r, &(i, j)) in graph.edges().iter().enumerate() {
        let b_r = delays.get(r) as usize;
        if b_r == 0 {
            continue;
        }
        let base = n + edge_offsets[r];
        let share = p.get(j, i);
        data[(j, i)] = T::zero();
        data[(base, i)] = share; // head receives the sender's share
        for k in 1..b_r {
            data[(base + k, base + k - 1)] = T::one();
        }
        data[(j, base + b_r - 1)] = T::one(); // tail delivers to the receiver
    }
    let tag = if b == 0 { p.tag() } else { Stochasticity::Column };
    Ok(AugmentedSystem {
        matrix: StochasticMatrix::new(data, tag)?,
        index_map,
        compute_count: n,
        edge_offsets,
        delays: delays.delays().to_vec(),
    })
}

/// Closed-form stationary distribution of the row-augmented system for a
/// doubly stochastic protocol: every compute node carries `pi_compute` and
/// every node on chain `r` carries `pi_chain[r] = w_r * pi_compute`, with
/// `w_r` the receiver weight on edge `r`.
#[derive(Debug, Clone, Serialize)]
pub struct StationaryClosedForm<T: Scalar> {
    pub pi_compute: T,
    pub pi_chain: Vec<T>,
    /// `n + sum_r b_r w_r`; `pi_compute` is its reciprocal.
    pub normalizer: T,
    compute_count: usize,
    delays: Vec<u32>,
}

impl<T: Scalar> StationaryClosedForm<T> {
    /// Assemble the full augmented stationary vector in the node order used
    /// by `augment_row`.
    pub fn full_vector(&self) -> DVector<T> {
        let b: usize = self.delays.iter().map(|&d| d as usize).sum();
        let mut v = DVector::zeros(self.compute_count + b);
        for i in 0..self.compute_count {
            v[i] = self.pi_compute;
        }
        let mut idx = self.compute_count;
        for (r, &d) in self.delays.iter().enumerate() {
            for _ in 0..d {
                v[idx] = self.pi_chain[r];
                idx += 1;
            }
        }
        v
    }
}

pub fn closed_form_stationary<T: Scalar>(
    p: &StochasticMatrix<T>,
    delays: &DelayAssignment,
    graph: &DirectedGraph,
) -> Result<StationaryClosedForm<T>> {
    if p.tag() != Stochasticity::Doubly {
        return Err(Error::NotStochastic {
            expected: "doubly",
            detail: "the closed-form stationary distribution only holds for doubly stochastic protocols".into(),
        });
    }
    check_common(p, delays, graph)?;
    let n = graph.node_count();
    let mut weighted = T::zero();
    let mut chain_weights = Vec::with_capacity(graph.edge_count());
    for (r, &(i, j)) in graph.edges().iter().enumerate() {
        let w = p.get(j, i);
        chain_weights.push(w);
        weighted += real::<T>(delays.get(r) as f64) * w;
    }
    let normalizer = real::<T>(n as f64) + weighted;
    let pi_compute = T::one() / normalizer;
    let pi_chain = chain_weights.into_iter().map(|w| w * pi_compute).collect();
    Ok(StationaryClosedForm {
        pi_compute,
        pi_chain,
        normalizer,
        compute_count: n,
        delays: delays.delays().to_vec(),
    })
}

/// Rescale initial values by `(n pi_i)^{-1}` so that row-stochastic consensus
/// on the rescaled values converges to the average of the originals.
pub fn rescale_for_average<T: Scalar>(x0: &DVector<T>, pi: &DVector<T>) -> Result<DVector<T>> {
    if x0.len() != pi.len() {
        return Err(Error::Dimension(format!(
            "value vector has {} entries, pi has {}",
            x0.len(),
            pi.len()
        )));
    }
    if let Some(i) = pi.iter().position(|&x| x <= T::zero()) {
        return Err(Error::invalid(format!(
            "stationary entry {i} is not positive; rescaling undefined"
        )));
    }
    let n = real::<T>(x0.len() as f64);
    Ok(DVector::from_fn(x0.len(), |i, _| x0[i] / (n * pi[i])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::stationary_distribution;
    use crate::testing::{three_node_delayed, three_node_graph, three_node_protocol};
    use approx::assert_abs_diff_eq;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_cycle() -> DirectedGraph {
        DirectedGraph::from_edges(2, &[(0, 1), (1, 0)]).unwrap()
    }

    fn half_matrix() -> StochasticMatrix<f64> {
        StochasticMatrix::from_rows(2, &[0.5, 0.5, 0.5, 0.5], Stochasticity::Doubly).unwrap()
    }

    #[test]
    fn row_augmentation_reproduces_worked_example() {
        let g = three_node_graph();
        let p = three_node_protocol();
        let delays = DelayAssignment::from_pairs(&g, &[(0, 1, 2)]).unwrap();
        let aug = augment_row(&p, &delays, &g).unwrap();
        assert_eq!(aug.dim(), 5);
        assert_eq!(aug.matrix().as_matrix(), three_node_delayed().as_matrix());
        assert_eq!(aug.index_map().len(), 2);
        assert_eq!(aug.index_map()[0].edge, (0, 1));
        assert_eq!(aug.index_map()[0].position, 1);
        assert_eq!(aug.index_map()[1].position, 2);
    }

    #[test]
    fn zero_delays_return_protocol_unchanged() {
        let g = three_node_graph();
        let p = three_node_protocol();
        let aug = augment_row(&p, &DelayAssignment::zero(&g), &g).unwrap();
        assert_eq!(aug.matrix().as_matrix(), p.as_matrix());
        assert_eq!(aug.delay_count(), 0);
        let col = augment_column(&p, &DelayAssignment::zero(&g), &g).unwrap();
        assert_eq!(col.matrix().as_matrix(), p.as_matrix());
    }

    #[test]
    fn row_augmentation_two_node_hand_example() {
        let g = two_cycle();
        let delays = DelayAssignment::from_pairs(&g, &[(0, 1, 1)]).unwrap();
        let aug = augment_row(&half_matrix(), &delays, &g).unwrap();
        let expected = [
            [0.5, 0.5, 0.0], // sender row unchanged
            [0.0, 0.5, 0.5], // receiver pulls from the delay node
            [1.0, 0.0, 0.0], // relay row
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(aug.matrix().get(i, j), expected[i][j]);
            }
        }
    }

    #[test]
    fn delay_rows_are_pure_relays() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let g = DirectedGraph::random_strongly_connected(5, 0.5, &mut rng).unwrap();
        let p = StochasticMatrix::<f64>::random_row_stochastic(&g, &mut rng);
        let delays = DelayAssignment::uniform_random(&g, 3, &mut rng);
        let aug = augment_row(&p, &delays, &g).unwrap();
        let n = aug.compute_count();
        for row in n..aug.dim() {
            let entries: Vec<f64> = (0..aug.dim()).map(|c| aug.matrix().get(row, c)).collect();
            assert_eq!(entries.iter().filter(|&&x| x != 0.0).count(), 1);
            assert_eq!(entries.iter().sum::<f64>(), 1.0);
            assert_eq!(aug.matrix().get(row, row), 0.0);
        }
    }

    #[test]
    fn column_augmentation_reproduces_worked_example() {
        let g = three_node_graph();
        let p = three_node_protocol();
        let delays = DelayAssignment::from_pairs(&g, &[(0, 1, 2)]).unwrap();
        let aug = augment_column(&p, &delays, &g).unwrap();
        let sixth = 1.0 / 6.0;
        let third = 1.0 / 3.0;
        let expected = [
            [2.0 / 3.0, third, 0.0, 0.0, 0.0],
            [0.0, third, 0.5, 0.0, 1.0],
            [sixth, third, 0.5, 0.0, 0.0],
            [sixth, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0, 0.0],
        ];
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(aug.matrix().get(i, j), expected[i][j], "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn column_augmentation_is_transpose_of_row_augmentation_for_unit_chains() {
        let g = two_cycle();
        let p = half_matrix();
        let row = augment_row(&p, &DelayAssignment::from_pairs(&g, &[(0, 1, 1)]).unwrap(), &g)
            .unwrap();
        let col =
            augment_column(&p, &DelayAssignment::from_pairs(&g, &[(1, 0, 1)]).unwrap(), &g)
                .unwrap();
        assert_eq!(
            row.matrix().as_matrix().transpose(),
            *col.matrix().as_matrix()
        );
        for j in 0..col.dim() {
            let s: f64 = col.matrix().as_matrix().column(j).iter().sum();
            assert_abs_diff_eq!(s, 1.0);
        }
    }

    #[test]
    fn delay_errors() {
        let g = three_node_graph();
        assert!(DelayAssignment::from_pairs(&g, &[(0, 1, -1)]).is_err());
        assert!(DelayAssignment::from_pairs(&g, &[(2, 0, 1)]).is_err()); // no such edge
    }

    #[test]
    fn closed_form_matches_worked_example() {
        let g = three_node_graph();
        let p = three_node_protocol();
        let delays = DelayAssignment::from_pairs(&g, &[(0, 1, 2)]).unwrap();
        let cf = closed_form_stationary(&p, &delays, &g).unwrap();
        assert_abs_diff_eq!(cf.pi_compute, 0.3, epsilon = 1e-15);
        let r = g.edge_index(0, 1).unwrap();
        assert_abs_diff_eq!(cf.pi_chain[r], 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(cf.normalizer, 10.0 / 3.0, epsilon = 1e-15);

        // eigensolve oracle
        let aug = augment_row(&p, &delays, &g).unwrap();
        let pi = stationary_distribution(aug.matrix()).unwrap();
        let full = cf.full_vector();
        for i in 0..5 {
            assert_abs_diff_eq!(pi[i], full[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn closed_form_zero_delays_is_uniform() {
        let g = three_node_graph();
        let cf =
            closed_form_stationary(&three_node_protocol(), &DelayAssignment::zero(&g), &g)
                .unwrap();
        assert_abs_diff_eq!(cf.pi_compute, 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(cf.full_vector().len(), 3);
    }

    #[test]
    fn closed_form_rejects_non_doubly_protocols() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = three_node_graph();
        let p = StochasticMatrix::<f64>::random_row_stochastic(&g, &mut rng);
        let delays = DelayAssignment::zero(&g);
        assert!(closed_form_stationary(&p, &delays, &g).is_err());
    }

    #[test]
    fn closed_form_max_weight_takes_two_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = DirectedGraph::random_connected(6, 0.5, &mut rng).unwrap();
        let p = StochasticMatrix::<f64>::max_weight(&g).unwrap();
        let delays = DelayAssignment::uniform_random(&g, 4, &mut rng);
        let cf = closed_form_stationary(&p, &delays, &g).unwrap();
        let n = 6.0;
        let b = delays.total_delay_nodes() as f64;
        let dmax = g.max_undirected_degree() as f64;
        assert_abs_diff_eq!(
            cf.pi_compute,
            (dmax + 1.0) / (b + n * (dmax + 1.0)),
            epsilon = 1e-12
        );
        for (r, &d) in delays.delays().iter().enumerate() {
            if d > 0 {
                assert_abs_diff_eq!(
                    cf.pi_chain[r],
                    1.0 / (b + n * (dmax + 1.0)),
                    epsilon = 1e-12
                );
            }
        }
        // normalization identity
        let total: f64 = n * cf.pi_compute
            + delays
                .delays()
                .iter()
                .enumerate()
                .map(|(r, &d)| d as f64 * cf.pi_chain[r])
                .sum::<f64>();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rescaling_recovers_the_average() {
        // uniform stationary: unchanged
        let x0 = DVector::from_vec(vec![4.0, 8.0]);
        let uniform = DVector::from_element(2, 0.5);
        assert_eq!(rescale_for_average(&x0, &uniform).unwrap(), x0);

        // skewed stationary
        let pi = DVector::from_vec(vec![0.75, 0.25]);
        let scaled = rescale_for_average(&x0, &pi).unwrap();
        assert_abs_diff_eq!(scaled[0], 8.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(scaled[1], 16.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pi.dot(&scaled), 6.0, epsilon = 1e-12);

        let zero = DVector::from_vec(vec![1.0, 0.0]);
        assert!(rescale_for_average(&x0, &zero).is_err());
    }

    #[test]
    fn rescaled_delayed_consensus_hits_the_original_average() {
        let g = three_node_graph();
        let p = three_node_protocol();
        let delays = DelayAssignment::from_pairs(&g, &[(0, 1, 2)]).unwrap();
        let aug = augment_row(&p, &delays, &g).unwrap();
        let cf = closed_form_stationary(&p, &delays, &g).unwrap();

        let x0 = DVector::from_vec(vec![4.0, -2.0, 7.0]);
        let average = x0.iter().sum::<f64>() / 3.0;
        let pi_compute = DVector::from_element(3, cf.pi_compute);
        let rescaled = rescale_for_average(&x0, &pi_compute).unwrap();
        let mut state = DVector::zeros(5);
        for i in 0..3 {
            state[i] = rescaled[i];
        }
        for _ in 0..2000 {
            state = aug.matrix().as_matrix() * state;
        }
        for i in 0..3 {
            assert_abs_diff_eq!(state[i], average, epsilon = 1e-8);
        }
    }

    #[test]
    fn consensus_limit_is_the_stationary_weighted_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = DirectedGraph::random_strongly_connected(5, 0.5, &mut rng).unwrap();
        let p = StochasticMatrix::<f64>::random_doubly_stochastic(&g, &mut rng).unwrap();
        let delays = DelayAssignment::uniform_random(&g, 3, &mut rng);
        let aug = augment_row(&p, &delays, &g).unwrap();
        let pi = stationary_distribution(aug.matrix()).unwrap();
        let mut state = DVector::zeros(aug.dim());
        let x0 = [3.0, -1.0, 4.0, 1.0, 5.0];
        for i in 0..5 {
            state[i] = x0[i];
        }
        let expected = pi.rows(0, 5).dot(&DVector::from_row_slice(&x0));
        for _ in 0..5000 {
            state = aug.matrix().as_matrix() * state;
        }
        for i in 0..aug.dim() {
            assert_abs_diff_eq!(state[i], expected, epsilon = 1e-8);
        }
    }

    #[test]
    fn column_augmentation_conserves_mass() {
        let g = three_node_graph();
        let p = three_node_protocol();
        let delays = DelayAssignment::from_pairs(&g, &[(0, 1, 2), (1, 2, 1)]).unwrap();
        let aug = augment_column(&p, &delays, &g).unwrap();
        let mut state = DVector::zeros(aug.dim());
        for i in 0..3 {
            state[i] = (i + 1) as f64;
        }
        let mass: f64 = state.iter().sum();
        for _ in 0..500 {
            state = aug.matrix().as_matrix() * state;
            assert_abs_diff_eq!(state.iter().sum::<f64>(), mass, epsilon = 1e-10);
        }
    }

    #[test]
    fn augmented_support_graph_diameter() {
        let g = three_node_graph();
        let delays = DelayAssignment::from_pairs(&g, &[(0, 1, 2)]).unwrap();
        let aug = augment_row(&three_node_protocol(), &delays, &g).unwrap();
        // longest shortest path routes through the whole relay chain
        assert_eq!(aug.support_graph().diameter().unwrap(), 4);
    }

    #[test]
    fn index_map_json_shape() {
        let g = three_node_graph();
        let delays = DelayAssignment::from_pairs(&g, &[(0, 1, 2)]).unwrap();
        let aug = augment_row(&three_node_protocol(), &delays, &g).unwrap();
        let json = aug.index_map_json();
        assert_eq!(json["3"]["edge"][0], 0);
        assert_eq!(json["3"]["edge"][1], 1);
        assert_eq!(json["3"]["position"], 1);
        assert_eq!(json["4"]["position"], 2);
    }

    #[test]
    fn delay_text_round_trip() {
        let g = three_node_graph();
        let delays = DelayAssignment::from_pairs(&g, &[(0, 1, 2), (2, 1, 5)]).unwrap();
        let mut buf = Vec::new();
        delays.write_text(&g, &mut buf).unwrap();
        let back = DelayAssignment::read_text(&g, &buf[..]).unwrap();
        assert_eq!(delays, back);
    }
}
