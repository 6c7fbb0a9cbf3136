use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter fell outside the domain of a function or distribution.
    #[error("domain error: {0}")]
    Domain(String),

    /// Observed data violate a structural invariant (zero column, bad shape, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    /// A computation produced a non-finite value or failed to converge.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
