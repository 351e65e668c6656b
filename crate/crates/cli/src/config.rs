//! Experiment configuration: a JSON config file plus flag overrides, with
//! flags winning. Every randomized component (generators, random protocols,
//! random delays) requires an explicit seed.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use delay_consensus::fixed_delay::DelayAssignment;
use delay_consensus::graph::DirectedGraph;
use delay_consensus::matrix::{StochasticMatrix, Stochasticity};
use delay_consensus::seeding::{derive_seed, derived_rng};
use delay_consensus::Protocol;

/// Stream tags so each randomized component draws independently of the others.
pub const STREAM_GRAPH: u64 = 1;
pub const STREAM_PROTOCOL: u64 = 2;
pub const STREAM_ROW_RUN: u64 = 3;
pub const STREAM_PUSH_RUN: u64 = 4;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub graph: Option<PathBuf>,
    #[serde(rename = "gen")]
    pub generator: Option<String>,
    pub n: Option<usize>,
    pub edge_prob: Option<f64>,
    pub protocol: Option<String>,
    pub matrix: Option<PathBuf>,
    pub matrix_kind: Option<String>,
    pub delay_model: Option<String>,
    pub delays: Option<PathBuf>,
    pub max_delay: Option<u32>,
    pub pmf: Option<Vec<f64>>,
    pub algorithm: Option<String>,
    pub max_steps: Option<usize>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub b_values: Option<Vec<u32>>,
    pub trials: Option<usize>,
    pub x0: Option<Vec<f64>>,
    pub tv_steps: Option<u32>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut text = String::new();
        File::open(path)
            .with_context(|| format!("opening config {}", path.display()))?
            .read_to_string(&mut text)?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Fully merged settings (flag value if given, else config value, else default).
#[derive(Debug, Clone)]
pub struct Settings {
    pub graph: Option<PathBuf>,
    pub generator: Option<String>,
    pub n: Option<usize>,
    pub edge_prob: f64,
    pub protocol: Option<String>,
    pub matrix: Option<PathBuf>,
    pub matrix_kind: Option<String>,
    pub delay_model: Option<String>,
    pub delays: Option<PathBuf>,
    pub max_delay: Option<u32>,
    pub pmf: Option<Vec<f64>>,
    pub algorithm: Option<String>,
    pub max_steps: usize,
    pub tol: f64,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub b_values: Option<Vec<u32>>,
    pub trials: Option<usize>,
    pub x0: Option<Vec<f64>>,
    pub tv_steps: u32,
}

impl Settings {
    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| anyhow::anyhow!("a --seed is mandatory for any randomized component"))
    }

    /// Load or generate the graph.
    pub fn graph(&self) -> Result<DirectedGraph> {
        if let Some(path) = &self.graph {
            let file = File::open(path)
                .with_context(|| format!("opening graph {}", path.display()))?;
            return Ok(DirectedGraph::read_edge_list(BufReader::new(file))?);
        }
        let name = self.generator.as_deref().unwrap_or("random-connected");
        let n = self.n.unwrap_or(5);
        match name {
            "cycle" => Ok(DirectedGraph::cycle(n)),
            "complete" => Ok(DirectedGraph::complete(n)),
            "random-connected" => {
                let mut rng = derived_rng(self.seed()?, &[STREAM_GRAPH]);
                Ok(DirectedGraph::random_connected(n, self.edge_prob, &mut rng)?)
            }
            "random-digraph" => {
                let mut rng = derived_rng(self.seed()?, &[STREAM_GRAPH]);
                Ok(DirectedGraph::random_strongly_connected(
                    n,
                    self.edge_prob,
                    &mut rng,
                )?)
            }
            other => bail!("unknown graph generator {other:?} (cycle | complete | random-connected | random-digraph)"),
        }
    }

    fn matrix_tag(&self) -> Result<Stochasticity> {
        match self.matrix_kind.as_deref().unwrap_or("row") {
            "row" => Ok(Stochasticity::Row),
            "column" => Ok(Stochasticity::Column),
            "doubly" => Ok(Stochasticity::Doubly),
            other => bail!("unknown matrix kind {other:?} (row | column | doubly)"),
        }
    }

    /// Load or generate the protocol for the given graph.
    pub fn protocol(&self, graph: &DirectedGraph) -> Result<Protocol> {
        if let Some(path) = &self.matrix {
            let file = File::open(path)
                .with_context(|| format!("opening matrix {}", path.display()))?;
            let p = StochasticMatrix::read_csv(BufReader::new(file), self.matrix_tag()?)?;
            if !p.respects(graph) {
                bail!("protocol matrix does not respect the graph");
            }
            return Ok(p);
        }
        let name = self.protocol.as_deref().unwrap_or("maxweight");
        match name {
            "maxweight" => Ok(StochasticMatrix::max_weight(graph)?),
            "random-row-stochastic" => {
                let mut rng = derived_rng(self.seed()?, &[STREAM_PROTOCOL]);
                Ok(StochasticMatrix::random_row_stochastic(graph, &mut rng))
            }
            "random-column-stochastic" => {
                let mut rng = derived_rng(self.seed()?, &[STREAM_PROTOCOL]);
                Ok(StochasticMatrix::random_column_stochastic(graph, &mut rng))
            }
            "random-doubly-stochastic" => {
                let mut rng = derived_rng(self.seed()?, &[STREAM_PROTOCOL]);
                Ok(StochasticMatrix::random_doubly_stochastic(graph, &mut rng)?)
            }
            other => bail!(
                "unknown protocol {other:?} (maxweight | random-row-stochastic | random-column-stochastic | random-doubly-stochastic)"
            ),
        }
    }

    /// The delay model for commands that accept either fixed or random delays.
    pub fn delay_model(&self) -> Result<DelayModel> {
        let name = self.delay_model.as_deref().unwrap_or_else(|| {
            if self.delays.is_some() {
                "fixed"
            } else if self.max_delay.is_some() {
                "random"
            } else {
                "none"
            }
        });
        match name {
            "none" => Ok(DelayModel::None),
            "fixed" => {
                let path = self
                    .delays
                    .clone()
                    .ok_or_else(|| anyhow::anyhow!("fixed delay model needs --delays FILE"))?;
                Ok(DelayModel::Fixed(path))
            }
            "random" => {
                let b = self
                    .max_delay
                    .ok_or_else(|| anyhow::anyhow!("random delay model needs --B INT"))?;
                Ok(DelayModel::Random {
                    max_delay: b,
                    pmf: self.pmf.clone(),
                })
            }
            other => bail!("unknown delay model {other:?} (none | fixed | random)"),
        }
    }

    pub fn fixed_delays(&self, graph: &DirectedGraph) -> Result<DelayAssignment> {
        match self.delay_model()? {
            DelayModel::None => Ok(DelayAssignment::zero(graph)),
            DelayModel::Fixed(path) => {
                let file = File::open(&path)
                    .with_context(|| format!("opening delays {}", path.display()))?;
                Ok(DelayAssignment::read_text(graph, BufReader::new(file))?)
            }
            DelayModel::Random { .. } => {
                bail!("this command needs fixed (or zero) delays, not the random model")
            }
        }
    }

    pub fn x0(&self, n: usize) -> Result<Vec<f64>> {
        match &self.x0 {
            Some(v) => {
                if v.len() != n {
                    bail!("x0 has {} entries for {n} nodes", v.len());
                }
                Ok(v.clone())
            }
            // default: node ids 1..=n
            None => Ok((1..=n).map(|i| i as f64).collect()),
        }
    }

    pub fn run_seed(&self, stream: u64) -> Result<u64> {
        Ok(derive_seed(self.seed()?, &[stream]))
    }
}

#[derive(Debug, Clone)]
pub enum DelayModel {
    None,
    Fixed(PathBuf),
    Random {
        max_delay: u32,
        pmf: Option<Vec<f64>>,
    },
}
