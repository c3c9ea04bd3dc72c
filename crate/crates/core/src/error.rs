use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or configuration value.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Two grids (or tensors) that must agree in shape do not.
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },

    /// Malformed binary or text input.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },

    /// Checkpoint architecture does not match what the caller expects.
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    /// A metric was requested on an empty point set.
    #[error("empty point set: {0}")]
    EmptySet(&'static str),

    #[error("training diverged at step {step} (batch item {batch_item}, sigma {sigma:e}): {message}")]
    Training {
        step: usize,
        batch_item: usize,
        sigma: f64,
        message: String,
    },

    #[error("sampler produced a non-finite state at step {step} (sigma {sigma:e})")]
    Sampler { step: usize, sigma: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}
