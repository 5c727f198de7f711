use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite function value {value} at coordinate {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown label in line {line:?}")]
    UnknownLabel { line: String },

    #[error("malformed line {line:?}: {message}")]
    MalformedLine { line: String, message: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("no training records for coarse category {0}")]
    MissingCategory(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("forward cache does not match this model: {0}")]
    StaleCache(String),

    #[error("model container: {0}")]
    Container(String),

    #[error("taxonomy mismatch: {0}")]
    TaxonomyMismatch(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
