use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported oracle: {0}")]
    UnsupportedOracle(String),

    /// A non-finite gradient or iterate appeared at `step` (1-based).
    #[error("diverged at step {step}")]
    Diverged { step: u64 },

    #[error("line search failed: inverse stepsize {b:e} exceeded the cap without sufficient decrease")]
    LineSearchFailure { b: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
