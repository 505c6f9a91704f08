use thiserror::Error;

/// Errors raised across the simulator and the verification harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("integration failed at step {step}: {reason}")]
    Integration { step: u64, reason: String },

    #[error("Monte Carlo blow-up on path {path}: {reason}")]
    Blowup { path: u64, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("sequence exhausted: {0}")]
    Exhausted(String),

    #[error("snapshot format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
