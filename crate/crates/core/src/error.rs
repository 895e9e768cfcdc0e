use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A label-index page could not be fetched after all retries.
    #[error("ingestion failed at page {cursor}: {message}")]
    Ingest { cursor: usize, message: String },

    /// Malformed XML or index payload. `offset` is a byte offset into the input.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("validation error{}: {message}", line.map(|l| format!(" on line {l}")).unwrap_or_default())]
    Validation { line: Option<usize>, message: String },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("load error: {0}")]
    Load(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input data rather than a failed computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Validation { .. } | Error::Io { .. } | Error::Json(_) | Error::Load(_)
        )
    }
}
