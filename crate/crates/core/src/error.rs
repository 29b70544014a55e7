use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("failed to ingest source {source_name}: {message}")]
    Ingestion {
        source_name: String,
        message: String,
    },

    #[error("split error for source {source_name}: {message}")]
    Split {
        source_name: String,
        message: String,
    },

    #[error("tokenization failed for document {doc_id}: {message}")]
    Tokenize { doc_id: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("infeasible constraint: {0}")]
    Infeasible(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("planning error: {0}")]
    Planning(String),

    #[error("training aborted at step {step}: {message}")]
    Training { step: u64, message: String },

    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        path: impl std::fmt::Display,
        line: usize,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code: 1 for validation failures, 2 for runtime and numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Ingestion { .. }
            | Error::Numeric(_)
            | Error::Sampling(_)
            | Error::Training { .. }
            | Error::Io { .. } => 2,
            _ => 1,
        }
    }
}
