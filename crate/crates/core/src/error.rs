use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every layer of the testbed.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("undefined similarity: {0}")]
    UndefinedSimilarity(String),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    Length { len: usize, max_len: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt checkpoint: {0}")]
    Corruption(String),
    #[error("incompatible model: {0}")]
    Compatibility(String),
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("mapping error: {0}")]
    Mapping(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("label error at line {line}: {msg}")]
    Label { line: usize, msg: String },
    #[error("input error: {0}")]
    Input(String),
    #[error("training diverged at step {step}: {msg}")]
    Divergence { step: u64, msg: String },
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("degenerate view: {0}")]
    Degeneracy(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
