use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// The CLI maps [`AmuError::Config`] to exit code 2 and everything that
/// concerns bad input data or files to exit code 3.
#[derive(Debug, Error)]
pub enum AmuError {
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported container version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl AmuError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        AmuError::Config(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        AmuError::Format(msg.into())
    }

    /// True for errors caused by invalid configuration rather than bad data.
    pub fn is_config(&self) -> bool {
        matches!(self, AmuError::Config(_) | AmuError::Numeric(_))
    }
}

pub type Result<T, E = AmuError> = std::result::Result<T, E>;
