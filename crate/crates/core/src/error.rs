use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty index set")]
    EmptySample,

    #[error("dimension {dim} exceeds the dense limit {limit}")]
    DenseLimit { dim: usize, limit: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("conjugate gradient broke down at iteration {iteration}: {reason}")]
    CgBreakdown { iteration: usize, reason: String },

    #[error("semi-stochastic iteration diverged at inner step {step}: |p| = {norm:e} > {threshold:e}")]
    SgiDivergence {
        step: usize,
        norm: f64,
        threshold: f64,
    },

    #[error("not a descent direction: g'p = {0:e}")]
    NotDescent(f64),

    #[error("line search failed after {backtracks} backtracks (last trial step {last_alpha:e})")]
    LineSearch { backtracks: usize, last_alpha: f64 },

    #[error("no convergence after {iterations} iterations (|grad| = {grad_norm:e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },

    #[error("eigensolver did not converge: {0}")]
    Eigen(String),

    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
