use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: expected {expected}, found {found}")]
    LayerShape {
        layer: usize,
        expected: String,
        found: String,
    },

    #[error("tensor shape {shape:?} does not match {len} values")]
    TensorShape { shape: Vec<usize>, len: usize },

    #[error("non-finite value encountered in {stage}")]
    NonFinite { stage: String },

    #[error("parameter vector has length {found}, model expects {expected}")]
    ParamLength { expected: usize, found: usize },

    #[error("batch is empty")]
    EmptyBatch,

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("batch of size {batch} cannot be split into {shards} equal shards")]
    Divisibility { batch: usize, shards: usize },

    #[error("dense Hessian of dimension {dim} exceeds the limit of {limit}")]
    HessianTooLarge { dim: usize, limit: usize },

    #[error("alignment fit undefined: the variance matrix is zero (full-batch case)")]
    UndefinedAlignment,

    #[error("exhaustive enumeration needs {required} draws, above the budget of {budget}; use monte-carlo mode")]
    EnumerationBudget { required: u128, budget: u128 },

    #[error("IDX format error at byte {offset}: {message}")]
    IdxFormat { offset: usize, message: String },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("training diverged at step {step}")]
    Divergence { step: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error on {path}: {source}")]
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

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
