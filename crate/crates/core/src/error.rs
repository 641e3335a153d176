use thiserror::Error;

pub type Result<T> = std::result::Result<T, MoggeError>;

#[derive(Debug, Error)]
pub enum MoggeError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariance of {0} is not positive definite")]
    NotPositiveDefinite(String),

    #[error("component {k} is degenerate (effective size {n_k:.3e})")]
    DegenerateComponent { k: usize, n_k: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("all {} starts failed: {}", .0.len(), .0.join("; "))]
    FitFailed(Vec<String>),

    #[error("no converged grid point to select from ({0} failures)")]
    Selection(usize),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}
