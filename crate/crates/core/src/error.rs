use thiserror::Error;

/// Errors produced anywhere in the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point lies behind the camera (depth {depth:.3e} m)")]
    BehindCamera { depth: f64 },
    #[error("point set is empty")]
    EmptySet,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no visible points to evaluate")]
    NoVisiblePoints,
    #[error("rotation is not orthonormal")]
    NonOrthonormalInput,
    #[error("query domain is empty")]
    EmptyOmega,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("cached forward state does not match the current parameters")]
    StaleCache,
    #[error("no valid pixels")]
    NoValidPixels,
    #[error("PnP needs at least {required} correspondences, got {got}")]
    InsufficientCorrespondences { required: usize, got: usize },
    #[error("PnP diverged after {iterations} iterations")]
    DivergedPnP { iterations: usize },
    #[error("diffusion step {step} out of range for a {num_steps}-step schedule")]
    StepOutOfRange { step: usize, num_steps: usize },
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("window of {window} frames does not fit a {frames}-frame sequence")]
    WindowTooLong { window: usize, frames: usize },
    #[error("non-finite loss in component {0}")]
    NonFiniteLoss(String),
    #[error("scene bundle invalid: {0}")]
    BundleInvalid(String),
    #[error("checkpoint corrupt: {0}")]
    CheckpointCorrupt(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
