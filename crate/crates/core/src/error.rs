use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("graph contains a cycle through edge {from} -> {to}")]
    Cycle { from: usize, to: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("node potentials {i} and {j} are tied (|p_i - p_j| <= {tol:e})")]
    DegeneratePotential { i: usize, j: usize, tol: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
