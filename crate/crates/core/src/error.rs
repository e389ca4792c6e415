use thiserror::Error;

use crate::transport::FrameError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("session aborted: {0}")]
    Aborted(String),

    #[error("qber {0:.4} too high for a positive key")]
    QberTooHigh(f64),

    #[error("threshold {threshold:e} is not reached even at zero loss (G = {gain_at_zero:e})")]
    BelowThreshold { threshold: f64, gain_at_zero: f64 },

    #[error("line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Frame(#[from] FrameError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
