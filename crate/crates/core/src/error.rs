use thiserror::Error;
use vfi_tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("event {index} at (x={x}, y={y}) lies outside a {width}x{height} frame")]
    EventOutOfBounds { index: usize, x: usize, y: usize, width: usize, height: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{height}x{width} input is not divisible by the downsample factor {factor}; resize it first")]
    ResizeRequired { height: usize, width: usize, factor: usize },
    #[error("timestep {t} outside the valid range {min}..={max}")]
    Timestep { t: usize, min: usize, max: usize },
    #[error("non-finite {what} at step {step}: {detail}")]
    NonFinite { what: String, step: usize, detail: String },
    #[error("hint extraction failed at sampling step {step}: {source}")]
    HintBackend { step: usize, source: Box<Error> },
    #[error("missing checkpoint for variant {0}")]
    MissingVariant(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("image: {0}")]
    Image(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by user-supplied configuration rather than runtime state.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::ResizeRequired { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
