use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the core depth-bin library.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("no valid pixels: {0}")]
    NoValidPixels(&'static str),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("unreadable raster {}: {reason}", path.display())]
    UnreadableRaster { path: PathBuf, reason: String },

    #[error("missing or malformed intrinsics {}: {reason}", path.display())]
    Intrinsics { path: PathBuf, reason: String },

    #[error("rgb/depth registration mismatch: rgb {rgb:?}, depth {depth:?}")]
    Registration {
        rgb: (usize, usize),
        depth: (usize, usize),
    },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Error {
    Error::Shape {
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
