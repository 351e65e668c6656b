use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not {expected}-stochastic: {detail}")]
    NotStochastic {
        expected: &'static str,
        detail: String,
    },

    #[error("graph is not strongly connected")]
    NotStronglyConnected,

    #[error("graph is not connected (undirected view)")]
    NotConnected,

    #[error("self-loop on node {0} is not allowed here")]
    SelfLoopForbidden(usize),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}
