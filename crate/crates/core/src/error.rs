use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Pre-normalization encoder output too small to normalize.
    #[error("degenerate embedding: pre-normalization norm {norm:e} < 1e-12")]
    DegenerateEmbedding { norm: f64 },

    /// A language entry has zero assignment probability for its own label.
    #[error("infinite language complexity: entry for point {index} has zero probability")]
    InfiniteComplexity { index: usize },

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("invalid configuration key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("epoch {epoch}, batch {batch}, sample {sample}: {source}")]
    Training {
        epoch: usize,
        batch: usize,
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sweep point {index} (complexity {complexity} nats): {source}")]
    SweepPoint {
        index: usize,
        complexity: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input or configuration rather than
    /// numerical failure during a run.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
