//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FattnError>;

#[derive(Error, Debug)]
pub enum FattnError {
    /// Waveform too short to produce a single analysis window.
    #[error("insufficient audio: {0}")]
    InsufficientAudio(String),

    /// A signal with zero power where a non-silent one is required.
    #[error("silent input: {0}")]
    SilentInput(String),

    /// Tensor or matrix dimensions do not agree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Invalid configuration value or combination.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A parameter name was registered twice.
    #[error("duplicate parameter name: {0}")]
    DuplicateParam(String),

    /// A parameter name was looked up but never registered.
    #[error("unknown parameter: {0}")]
    UnknownParam(String),

    /// NaN or infinity where a finite value is required.
    #[error("non-finite {0}")]
    NonFinite(String),

    /// Unsupported or malformed file contents.
    #[error("bad format: {0}")]
    BadFormat(String),

    /// Training diverged (non-finite loss).
    #[error("divergence at step {step}: {what}")]
    Divergence { step: usize, what: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
