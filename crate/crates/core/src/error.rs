use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("error consistency is undefined when expected agreement is 1 (p1={p1}, p2={p2})")]
    UndefinedKappa { p1: f64, p2: f64 },

    #[error("class {class} has no examples in the training split")]
    Stratification { class: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("line search failed after {iterations} iterations (f = {value})")]
    LineSearch {
        iterations: usize,
        value: f64,
        iterate: Vec<f64>,
    },

    #[error("pool of {size} models exceeds the exhaustive-search guard of {max}")]
    PoolTooLarge { size: usize, max: usize },

    #[error("json error: {0}")]
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
