use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular matrix (|det| = {det:e})")]
    SingularMatrix { det: f64 },
    #[error("insufficient features: found {found}, need at least {required}")]
    InsufficientFeatures { found: usize, required: usize },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("reprojection RMS {rms:.3} px exceeds {limit:.3} px")]
    ReprojectionTooLarge { rms: f64, limit: f64 },
    #[error("event stream not sorted by time at record {index}")]
    UnsortedStream { index: usize },
    #[error("record ({x}, {y}) outside {width}x{height} raster")]
    OutOfBounds {
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("non-monotonic timestamps at frame {index}")]
    NonMonotonicTimestamps { index: usize },
    #[error("need at least {required} frames, got {found}")]
    InsufficientFrames { found: usize, required: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
