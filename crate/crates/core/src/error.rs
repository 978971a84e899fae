use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("memory budget exceeded: {0}")]
    Budget(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("missing data: {0}")]
    Missing(String),
    /// The optimizer produced a NaN or infinity; carries the last finite iterate.
    #[error("non-finite loss or gradient at iteration {iter}")]
    Diverged { iter: usize, last_finite: Vec<f64> },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
