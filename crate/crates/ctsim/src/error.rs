use thiserror::Error;

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("phantom size {0} is below the minimum of 32")]
    PhantomTooSmall(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("metal mask is empty, nothing to corrupt")]
    EmptyMetalMask,
    #[error("metal trace covers the whole projection at angle index {0}")]
    TraceCoversRow(usize),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("image {0:?} is smaller than the {1}x{1} SSIM window")]
    ImageTooSmall((usize, usize), usize),
    #[error("no pixels left to score after masking")]
    EmptyScoringRegion,
    #[error("bad array file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Png(#[from] ::image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
