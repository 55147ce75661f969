use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("timestep {t} out of range 1..={max}")]
    StepOutOfRange { t: usize, max: usize },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },

    #[error("factor {factor} incompatible with shape {shape:?}: {reason}")]
    IncompatibleFactor {
        factor: usize,
        shape: Vec<usize>,
        reason: &'static str,
    },

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value at step {t}")]
    NonFinite { t: usize },

    #[error("non-finite training loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),

    #[error("malformed pixmap header: {0}")]
    MalformedHeader(String),

    #[error("unsupported pixmap maxval {0} (only 255 is accepted)")]
    UnsupportedMaxval(u32),

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
