use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed container: {0}")]
    Malformed(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid recipe: {0}")]
    Recipe(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("calibration pool exhausted: requested {requested} images, pool has {available}")]
    PoolExhausted { requested: usize, available: usize },

    #[error("non-finite quantization range: [{0}, {1}]")]
    NonFinite(f32, f32),

    #[error("empty histogram for tensor `{0}`")]
    EmptyHistogram(String),

    #[error("configuration not permitted by target profile {profile}: {reason}")]
    ProfileViolation { profile: String, reason: String },

    #[error("calibration cache does not match model: {0}")]
    CacheMismatch(String),

    #[error("missing quantization parameters for `{0}`")]
    MissingParams(String),

    #[error("graph is not eligible for integer-only execution: {0}")]
    NotIntegerOnly(String),

    #[error("empty training set")]
    EmptyTrainSet,

    #[error("empty search space")]
    EmptySpace,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Malformed(e.to_string())
    }
}
