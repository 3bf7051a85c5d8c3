use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("garbled header {path}: {reason}")]
    Header { path: PathBuf, reason: String },

    #[error("raw length mismatch: expected {expected} bytes, found {found}")]
    RawLengthMismatch { expected: usize, found: usize },

    #[error("value-range violation at voxel {index}: {value}")]
    ValueRange { index: usize, value: f64 },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("geometry mismatch: dims {left:?} vs {right:?}")]
    GeometryMismatch {
        left: [usize; 3],
        right: [usize; 3],
    },

    #[error("slice index {index} out of range for {n_slices} slices")]
    SliceOutOfRange { index: usize, n_slices: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A numerical precondition of an operation does not hold
    /// (empty ground truth for ARVD, constant input to a correlation, ...).
    #[error("numerical precondition violated: {0}")]
    Precondition(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that stem from a violated numerical precondition
    /// rather than from malformed data.
    pub fn is_precondition(&self) -> bool {
        matches!(self, Error::Precondition(_))
    }
}
