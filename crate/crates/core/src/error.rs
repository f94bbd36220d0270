//! Crate-wide error type.

/// Errors produced by model construction, filtering and solving.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inputs violate a documented precondition (dimension mismatch,
    /// non-stochastic rows, empty data, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An observation with zero probability under the model was fed to the
    /// filter. Callers decide the fallback (the CLI resets to uniform).
    #[error("observation (y={y}, x={x}) has zero probability under the model")]
    ImpossibleObservation { y: i64, x: i64 },

    /// Serialization or deserialization failure.
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
