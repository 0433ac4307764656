use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {constraint}")]
    InvalidParameter { field: String, constraint: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("point {point} lies outside the delay segment [-{delay}, 0]")]
    OutOfSegment { point: f64, delay: f64 },

    #[error("time {time} lies outside [0, {horizon}]")]
    OutOfHorizon { time: f64, horizon: f64 },

    #[error("negative semigroup time {0}")]
    NegativeTime(f64),

    #[error("non-finite drift at step {step} (t = {time}); parameters diverge")]
    NonFiniteDrift { step: usize, time: f64 },

    #[error("mean-path cross-check failed: relative sup-norm residual {residual:.3e} exceeds {tolerance:.1e}")]
    CrossCheck { residual: f64, tolerance: f64 },

    #[error("control file: {0}")]
    ControlFile(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            constraint: constraint.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
