use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input data; `row` is the 1-based data row (0 for the header).
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// A client's labels contain only one class, so its empirical priors
    /// would sit on the boundary of (0, 1).
    #[error("degenerate priors: {positives} positive / {negatives} negative labels")]
    DegeneratePriors { positives: usize, negatives: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("client {client_id} failed in round {round}: {source}")]
    ClientUpdate {
        round: usize,
        client_id: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid checkpoint file: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(row: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            row,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
