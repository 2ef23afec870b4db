use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// A record in an input file violates the data schema.
    #[error("schema violation in {record}: {reason}")]
    Schema { record: String, reason: String },

    #[error("unknown class id {0}")]
    UnknownClass(u8),

    #[error("invalid image: {0}")]
    Image(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("descriptor dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("descriptor database is empty")]
    EmptyDatabase,

    #[error("descriptor database format: {0}")]
    DatabaseFormat(String),

    #[error("graph has {n} vertices, above the solver cap of {cap}")]
    GraphTooLarge { n: usize, cap: usize },

    #[error("need at least {needed} correspondences, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },

    #[error("world generation failed: {0}")]
    Generation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(record: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            record: record.into(),
            reason: reason.into(),
        }
    }
}
