//! Error type shared by all core modules.

use thiserror::Error;

/// Errors produced by the core algorithms.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Vector or matrix shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An input is degenerate for the requested operation (e.g. zero vector).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A parameter is outside its valid range. Maps to the config exit code.
    #[error("invalid parameter `{field}`: {message}")]
    InvalidParameter { field: String, message: String },

    /// An operation that needs at least one element received none.
    #[error("empty set: {0}")]
    EmptySet(String),

    /// A label or index is out of range.
    #[error("index out of range: {0}")]
    IndexError(String),

    /// A computation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training diverged (NaN/Inf loss) at the named epoch.
    #[error("numeric divergence at epoch {epoch}: {message}")]
    NumericDivergence { epoch: usize, message: String },

    /// A call violated a module protocol (e.g. a class missing from the bank).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A query has no positive gallery entry, so AP is undefined.
    #[error("undefined query: {0}")]
    UndefinedQuery(String),
}

impl CoreError {
    pub fn invalid_parameter(field: &str, message: impl Into<String>) -> Self {
        CoreError::InvalidParameter {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
