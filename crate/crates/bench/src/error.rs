use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("cannot ingest {}: {reason}", path.display())]
    Ingestion { path: PathBuf, reason: String },

    /// Training produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error(transparent)]
    Core(#[from] ebn::Error),
}

impl BenchError {
    pub fn ingestion(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        BenchError::Ingestion { path: path.into(), reason: reason.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        BenchError::Io { path: path.into(), source }
    }

    /// Process exit code: 2 for configuration errors, 3 for ingestion
    /// errors, 4 for numerical failures and 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::Core(ebn::Error::Config(_) | ebn::Error::UnsupportedKind(_)) => 2,
            BenchError::Ingestion { .. } => 3,
            BenchError::Numerical(_) | BenchError::Core(ebn::Error::NonFinite(_)) => 4,
            _ => 1,
        }
    }
}
