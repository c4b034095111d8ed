use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite {quantity} (first bad index {index}, value {value})")]
    NonFinite {
        quantity: &'static str,
        index: usize,
        value: f64,
    },

    #[error("phase {phase}, epoch {epoch}, step {step}: {source}")]
    Aborted {
        phase: usize,
        epoch: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("incomplete metrics ledger: {0}")]
    IncompleteLedger(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialize(String),
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for numerical aborts, including ones wrapped with training context.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite { .. } => true,
            Error::Aborted { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
