use thiserror::Error;

/// Errors produced by any prunebench module.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch at layer `{layer}`: {detail}")]
    ShapeMismatch { layer: String, detail: String },

    #[error("non-finite loss at batch index {batch_index}")]
    NonFiniteLoss { batch_index: usize },

    #[error("invalid model spec: {0}")]
    InvalidModel(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid prune plan: {0}")]
    InvalidPlan(String),

    #[error("FLOPs convention mismatch: {0} vs {1}")]
    ConventionMismatch(String, String),

    #[error("cannot resolve shape at layer `{layer}`: {detail}")]
    UnresolvableShape { layer: String, detail: String },

    #[error("manifests are incomparable: {0}")]
    Incomparable(String),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("malformed dataset record at byte offset {offset}: {detail}")]
    MalformedRecord { offset: u64, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("base checkpoint hash mismatch: expected {expected}, got {actual}")]
    HashMismatch { expected: String, actual: String },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
