use std::path::PathBuf;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("frame {frame} is outside the valid range (limit {limit})")]
    OutOfRange { frame: usize, limit: usize },

    #[error("invalid state: {0}")]
    State(&'static str),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("image too small for an 11x11 window: {width}x{height}")]
    TooSmall { width: usize, height: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("duration {requested} exceeds capacity {capacity}")]
    Capacity { requested: usize, capacity: usize },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("point cloud contains no points")]
    EmptyCloud,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },

    #[error("missing image {0}")]
    MissingImage(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
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

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
