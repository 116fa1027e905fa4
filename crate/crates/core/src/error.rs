use std::io;

use thiserror::Error;

/// Errors produced anywhere in the workbench.
#[derive(Debug, Error)]
pub enum Error {
    /// A value violated a mathematical precondition (non-SPD stiffness, bad quaternion, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid or inconsistent configuration (file, CLI flags, model dimensions).
    #[error("configuration error: {0}")]
    Config(String),

    /// The simulation produced a non-finite state; carries a short diagnostic snapshot.
    #[error("simulation diverged at t={time:.4}s: {snapshot}")]
    Diverged { time: f64, snapshot: String },

    /// Malformed or out-of-order teleoperation message.
    #[error("protocol error ({code}): {message}")]
    Protocol { code: String, message: String },

    /// Corrupt or incompatible on-disk data.
    #[error("format error: {0}")]
    Format(String),

    /// Training or inference produced NaN.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A run finished but did not achieve what was required of it.
    #[error("run failed: {0}")]
    Failed(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn protocol(code: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Protocol {
            code: code.into(),
            message: message.into(),
        }
    }

    /// True for errors that stem from user-supplied configuration rather than runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
