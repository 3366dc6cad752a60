use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("schema inference failed: {0}")]
    SchemaInference(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("attribute `{0}` has no non-missing values")]
    DegenerateAttribute(String),

    #[error("no numeric attributes to build a bounding box from")]
    EmptyGeometry,

    #[error("leaf statistics are stale: {0}")]
    StaleStats(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("stream error: {0}")]
    Stream(String),

    #[error("unsupported dataset: {0}")]
    UnsupportedDataset(String),

    #[error("quota for batch {batch} cannot be satisfied: {message}")]
    Quota { batch: usize, message: String },

    #[error("undefined test: {0}")]
    UndefinedTest(String),

    #[error("model has not been trained on any batch yet")]
    NotTrained,

    #[error("results table has no cell for method `{method}` on batch {batch}")]
    MissingCell { method: String, batch: usize },

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 1 user/config error, 2 data error, 3 internal invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidInput(_) | Error::UndefinedTest(_) => 1,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::SchemaInference(_)
            | Error::DegenerateAttribute(_)
            | Error::Stream(_)
            | Error::UnsupportedDataset(_)
            | Error::Quota { .. }
            | Error::Serialization(_) => 2,
            Error::EmptyGeometry
            | Error::StaleStats(_)
            | Error::InvalidState(_)
            | Error::NotTrained
            | Error::MissingCell { .. } => 3,
        }
    }
}
