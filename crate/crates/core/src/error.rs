use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unreadable file {path}: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("zero-size raster")]
    ZeroSize,

    #[error("unwritable path {path}: {reason}")]
    UnwritablePath { path: PathBuf, reason: String },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("levels too large: {levels} levels need at least {needed}px per axis, image is {width}x{height}")]
    LevelsTooLarge {
        levels: usize,
        needed: usize,
        width: usize,
        height: usize,
    },

    #[error("malformed pyramid: {0}")]
    MalformedPyramid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("budget infeasible: requested {requested}, smallest achievable {smallest_achievable}")]
    BudgetInfeasible {
        requested: f64,
        smallest_achievable: f64,
    },

    #[error("external codec failed ({status}): {stderr}")]
    ExternalFailed { status: String, stderr: String },

    #[error("external codec produced no output at {0}")]
    MissingOutput(PathBuf),

    #[error("external codec timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
