//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, EgError>;

#[derive(Error, Debug)]
pub enum EgError {
    /// Invalid argument values (negative concentration, non-unit direction, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Incompatible shapes between two artifacts.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A numerical procedure failed to produce a finite, converged result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Malformed text input (CSV cell, config line), with the 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EgError {
    pub fn domain(msg: impl Into<String>) -> Self {
        EgError::Domain(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        EgError::Dimension(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        EgError::Numerical(msg.into())
    }
}
