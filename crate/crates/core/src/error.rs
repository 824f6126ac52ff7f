use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corpus generation failed: {0}")]
    Generation(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("snapshot restore failed: {0}")]
    Snapshot(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("illegal action {action}: {reason}")]
    IllegalAction { action: String, reason: String },

    #[error("invalid episode state: {0}")]
    Episode(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
