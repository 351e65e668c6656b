//! Dense stochastic matrices with a stochasticity tag, validation against a
//! graph, protocol builders and the row-major CSV format.
//!
//! Index convention, fixed once for the whole crate: a row-stochastic
//! protocol `P` drives `x(t) = P x(t-1)`, and `p[i][j]` is the weight
//! receiver `i` assigns to sender `j`, so a nonzero off-diagonal entry
//! `(i, j)` requires the edge `(j, i)`. Column-stochastic protocols share
//! the same support rule: entry `(i, j)` is the share sender `j` pushes to
//! receiver `i`.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::DirectedGraph;
use crate::scalar::{real, Scalar};

/// Absolute tolerance on row/column sums for the stochasticity tags.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stochasticity {
    Row,
    Column,
    Doubly,
    /// Nonnegative square matrix with no sum constraint (e.g. substochastic
    /// blocks with zero rows).
    General,
}

impl Stochasticity {
    pub fn label(self) -> &'static str {
        match self {
            Stochasticity::Row => "row",
            Stochasticity::Column => "column",
            Stochasticity::Doubly => "doubly",
            Stochasticity::General => "general",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix<T: Scalar> {
    data: DMatrix<T>,
    tag: Stochasticity,
}

impl<T: Scalar> StochasticMatrix<T> {
    /// Validate `data` against `tag` with the default tolerance.
    pub fn new(data: DMatrix<T>, tag: Stochasticity) -> Result<Self> {
        Self::with_tol(data, tag, real(STOCHASTIC_TOL))
    }

    pub fn with_tol(data: DMatrix<T>, tag: Stochasticity, tol: T) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(Error::Dimension(format!(
                "stochastic matrix must be square, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        for i in 0..data.nrows() {
            for j in 0..data.ncols() {
                if data[(i, j)] < T::zero() {
                    return Err(Error::NotStochastic {
                        expected: tag.label(),
                        detail: format!("negative entry {:?} at ({i}, {j})", data[(i, j)]),
                    });
                }
            }
        }
        let check_rows = matches!(tag, Stochasticity::Row | Stochasticity::Doubly);
        let check_cols = matches!(tag, Stochasticity::Column | Stochasticity::Doubly);
        if check_rows {
            for i in 0..data.nrows() {
                let s = data.row(i).iter().fold(T::zero(), |a, &x| a + x);
                if (s - T::one()).abs() > tol {
                    return Err(Error::NotStochastic {
                        expected: tag.label(),
                        detail: format!("row {i} sums to {s:?}"),
                    });
                }
            }
        }
        if check_cols {
            for j in 0..data.ncols() {
                let s = data.column(j).iter().fold(T::zero(), |a, &x| a + x);
                if (s - T::one()).abs() > tol {
                    return Err(Error::NotStochastic {
                        expected: tag.label(),
                        detail: format!("column {j} sums to {s:?}"),
                    });
                }
            }
        }
        Ok(StochasticMatrix { data, tag })
    }

    pub fn from_rows(dim: usize, rows: &[f64], tag: Stochasticity) -> Result<Self> {
        let data = DMatrix::from_row_slice(dim, dim, rows).map(|x| real::<T>(x));
        Self::new(data, tag)
    }

    pub fn identity(dim: usize) -> Self {
        StochasticMatrix {
            data: DMatrix::identity(dim, dim),
            tag: Stochasticity::Doubly,
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn tag(&self) -> Stochasticity {
        self.tag
    }

    pub fn is_row_stochastic(&self) -> bool {
        matches!(self.tag, Stochasticity::Row | Stochasticity::Doubly)
    }

    pub fn is_column_stochastic(&self) -> bool {
        matches!(self.tag, Stochasticity::Column | Stochasticity::Doubly)
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<T> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.data
    }

    /// Transpose; flips the Row/Column tag, Doubly and General are unchanged.
    pub fn transpose(&self) -> Self {
        let tag = match self.tag {
            Stochasticity::Row => Stochasticity::Column,
            Stochasticity::Column => Stochasticity::Row,
            other => other,
        };
        StochasticMatrix {
            data: self.data.transpose(),
            tag,
        }
    }

    /// Whether every nonzero off-diagonal entry `(i, j)` is backed by the
    /// edge `(j, i)` of `graph`.
    pub fn respects(&self, graph: &DirectedGraph) -> bool {
        if self.dim() != graph.node_count() {
            return false;
        }
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                if i != j && self.data[(i, j)] != T::zero() && !graph.has_edge(j, i) {
                    return false;
                }
            }
        }
        true
    }

    /// Max-weight protocol of an undirected view: `I - (diag(deg) - A) / (max_deg + 1)`.
    /// Doubly stochastic and symmetric. The input graph must be connected when
    /// viewed undirected and must not carry self-loops.
    pub fn max_weight(graph: &DirectedGraph) -> Result<Self> {
        if let Some(&i) = graph.self_loops().first() {
            return Err(Error::SelfLoopForbidden(i));
        }
        if !graph.is_connected_undirected() {
            return Err(Error::NotConnected);
        }
        let n = graph.node_count();
        let deg = graph.undirected_degrees();
        let denom = real::<T>((deg.iter().copied().max().unwrap_or(0) + 1) as f64);
        let mut data = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut nbrs: Vec<usize> = graph
                .out_neighbors(i)
                .iter()
                .chain(graph.in_neighbors(i).iter())
                .copied()
                .collect();
            nbrs.sort_unstable();
            nbrs.dedup();
            for j in nbrs {
                data[(i, j)] = T::one() / denom;
            }
            data[(i, i)] = T::one() - real::<T>(deg[i] as f64) / denom;
        }
        StochasticMatrix::new(data, Stochasticity::Doubly)
    }

    /// Random row-stochastic protocol respecting `graph`: uniform draws on
    /// the support (incoming edges plus the diagonal), rows normalized.
    pub fn random_row_stochastic<R: Rng>(graph: &DirectedGraph, rng: &mut R) -> Self {
        let n = graph.node_count();
        let mut data = DMatrix::zeros(n, n);
        for i in 0..n {
            data[(i, i)] = real::<T>(rng.random::<f64>());
            for &j in graph.in_neighbors(i) {
                data[(i, j)] = real::<T>(rng.random::<f64>());
            }
            let s = data.row(i).iter().fold(T::zero(), |a, &x| a + x);
            for j in 0..n {
                data[(i, j)] /= s;
            }
        }
        StochasticMatrix {
            data,
            tag: Stochasticity::Row,
        }
    }

    /// Random column-stochastic protocol respecting `graph`: each sender
    /// splits its unit share over its out-edges plus itself.
    pub fn random_column_stochastic<R: Rng>(graph: &DirectedGraph, rng: &mut R) -> Self {
        let n = graph.node_count();
        let mut data = DMatrix::zeros(n, n);
        for j in 0..n {
            data[(j, j)] = real::<T>(rng.random::<f64>());
            for &i in graph.out_neighbors(j) {
                data[(i, j)] = real::<T>(rng.random::<f64>());
            }
            let s = data.column(j).iter().fold(T::zero(), |a, &x| a + x);
            for i in 0..n {
                data[(i, j)] /= s;
            }
        }
        StochasticMatrix {
            data,
            tag: Stochasticity::Column,
        }
    }

    /// Random doubly stochastic protocol respecting `graph`: uniform draws on
    /// the support (all edges plus the full diagonal), then Sinkhorn scaling
    /// until row and column sums are within `1e-14`.
    pub fn random_doubly_stochastic<R: Rng>(graph: &DirectedGraph, rng: &mut R) -> Result<Self> {
        let n = graph.node_count();
        let mut data: DMatrix<T> = DMatrix::zeros(n, n);
        for i in 0..n {
            data[(i, i)] = real::<T>(0.1 + rng.random::<f64>());
        }
        for &(s, r) in graph.edges() {
            data[(r, s)] = real::<T>(0.1 + rng.random::<f64>());
        }
        let tol = real::<T>(1e-14);
        for _ in 0..100_000 {
            for i in 0..n {
                let s = data.row(i).iter().fold(T::zero(), |a, &x| a + x);
                for j in 0..n {
                    data[(i, j)] /= s;
                }
            }
            for j in 0..n {
                let s = data.column(j).iter().fold(T::zero(), |a, &x| a + x);
                for i in 0..n {
                    data[(i, j)] /= s;
                }
            }
            let worst = (0..n)
                .map(|i| {
                    (data.row(i).iter().fold(T::zero(), |a, &x| a + x) - T::one()).abs()
                })
                .fold(T::zero(), |a, x| a.max(x));
            if worst <= tol {
                return StochasticMatrix::new(data, Stochasticity::Doubly);
            }
        }
        Err(Error::invalid(
            "Sinkhorn scaling did not converge; the support may not admit a doubly stochastic matrix",
        ))
    }

    /// Support graph in communication orientation: nonzero entry `(i, j)`,
    /// `i != j`, yields the edge `j -> i`. The diagonal yields self-loops.
    pub fn communication_support(&self) -> DirectedGraph {
        let n = self.dim();
        let mut g = DirectedGraph::new(n);
        for i in 0..n {
            for j in 0..n {
                if self.data[(i, j)] != T::zero() {
                    let _ = g.add_edge(j, i);
                }
            }
        }
        g
    }

    /// Support graph in walk orientation: nonzero entry `(v, w)` yields the
    /// edge `v -> w`, i.e. a transition of the Markov chain driven by the
    /// rows of the matrix. Canonical paths live on this graph.
    pub fn walk_support(&self) -> DirectedGraph {
        let n = self.dim();
        let mut g = DirectedGraph::new(n);
        for v in 0..n {
            for w in 0..n {
                if self.data[(v, w)] != T::zero() {
                    let _ = g.add_edge(v, w);
                }
            }
        }
        g
    }

    /// Largest off-diagonal entry.
    pub fn max_off_diagonal(&self) -> T {
        let mut p = T::zero();
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                if i != j {
                    p = p.max(self.data[(i, j)]);
                }
            }
        }
        p
    }

    /// Read a row-major CSV of reals and validate it against `tag`.
    pub fn read_csv<R: BufRead>(reader: R, tag: Stochasticity) -> Result<Self> {
        let mut rows: Vec<Vec<T>> = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: Vec<T> = line
                .split(',')
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map(real::<T>)
                        .map_err(|e| Error::parse(format!("bad matrix entry {f:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::parse("empty matrix CSV"));
        }
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::parse("matrix CSV is not square"));
        }
        let data = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
        StochasticMatrix::new(data, tag)
    }

    /// Write the row-major CSV format (shortest round-trip float formatting).
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        write_dense_csv(&self.data, &mut writer)
    }
}

pub fn write_dense_csv<T: Scalar, W: Write>(data: &DMatrix<T>, writer: &mut W) -> Result<()> {
    for i in 0..data.nrows() {
        let row: Vec<String> = (0..data.ncols())
            .map(|j| format!("{}", crate::scalar::to_f64(data[(i, j)])))
            .collect();
        writeln!(writer, "{}", row.join(","))?;
    }
    Ok(())
}
