//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced while loading inputs or running operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    /// A loaded object violates one of its structural invariants.
    #[error("validation error: {0}")]
    Validation(String),

    /// An operation was called with inputs outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A documented precondition does not hold; distinct from a negative
    /// verdict so callers can tell "not applicable" from "checked and false".
    #[error("precondition not satisfied: {0}")]
    Precondition(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Instance exceeds the size limits of an exhaustive procedure.
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
