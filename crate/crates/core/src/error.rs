use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
///
/// Variants are grouped so that a caller (the CLI in particular) can map them
/// onto coarse categories with [`Error::category`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("{file}:{line}: column `{column}`: {message}")]
    MalformedRow {
        file: PathBuf,
        line: u64,
        column: String,
        message: String,
    },

    #[error("{file}: {message}")]
    Csv { file: PathBuf, message: String },

    #[error("first execution precedes creation for queries: {}", .0.join(", "))]
    NegativeCompletion(Vec<String>),

    #[error("duplicate query_id `{query_id}` for analyst `{analyst_id}`")]
    DuplicateQuery { analyst_id: String, query_id: String },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite learning stock in state {state}")]
    NonFiniteLearningStock { state: usize },

    #[error("non-finite value at period {t}: {what}")]
    NonFinite { t: usize, what: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("state space too large for path enumeration: {n_states}^{horizon} paths")]
    StateSpaceTooLarge { n_states: usize, horizon: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("insufficient sample: {0}")]
    InsufficientSample(String),

    #[error("unsupported format version `{found}` (expected `{expected}`)")]
    Version { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure category, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
    Io,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Version { .. } => ErrorCategory::Config,
            Error::MalformedRow { .. }
            | Error::Csv { .. }
            | Error::NegativeCompletion(_)
            | Error::DuplicateQuery { .. }
            | Error::InvalidData(_)
            | Error::Shape(_)
            | Error::InsufficientSample(_)
            | Error::Json(_) => ErrorCategory::Data,
            Error::NonFiniteLearningStock { .. }
            | Error::NonFinite { .. }
            | Error::Numerical(_)
            | Error::StateSpaceTooLarge { .. }
            | Error::NotPositiveDefinite(_) => ErrorCategory::Numerical,
            Error::Io(_) => ErrorCategory::Io,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
