//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav format error in {path}: {reason}")]
    WavFormat { path: PathBuf, reason: String },

    /// A caller-supplied value violated a documented range or precondition.
    /// The message names the offending field.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The target cannot be aligned to the available frames. Distinguished
    /// from a numeric overflow so batch code can skip-and-count instead of
    /// poisoning a mean with infinities.
    #[error("ctc target infeasible: needs at least {needed} frames, got {got}")]
    CtcInfeasible { needed: usize, got: usize },

    #[error("enumeration bound exceeded: {0}")]
    EnumerationBound(String),

    #[error("non-finite gradient; update rejected")]
    NonFiniteGradient,

    #[error("non-finite loss at training step {step}")]
    NonFiniteLoss { step: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("manifest {path} line {line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn wav(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::WavFormat {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArg(msg.into())
    }
}
