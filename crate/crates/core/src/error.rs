use thiserror::Error;

/// Errors raised by the numeric core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("bad shape: {0}")]
    BadShape(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e}, tolerance {tolerance:e})")]
    NonSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("kernel size must be odd and positive, got {0}")]
    BadKernel(usize),

    #[error("resampling would produce a zero-sized extent from {extent} at factor {factor}")]
    DegenerateSize { extent: usize, factor: f64 },

    #[error("expected {expected} channels, got {actual}")]
    BadChannels { expected: usize, actual: usize },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
