use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("length mismatch: expected at least {expected} samples, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("range window [{0} m, {1} m] contains no range bins")]
    EmptyWindow(f64, f64),

    #[error("no crossing between x_max and 1/W in the swept interval range")]
    NoCrossing,

    #[error("hit rate is undefined without ground-truth targets")]
    NoTruth,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
