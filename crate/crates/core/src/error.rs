//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by simulation, solver and harness operations.
///
/// The CLI maps `Config` to exit code 1 and the numerical/runtime variants to
/// exit code 2; acceptance-check failures are a separate exit code 3 decided
/// at the harness level.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters, malformed configuration, or a method/spec mismatch.
    #[error("configuration error: {0}")]
    Config(String),

    /// A query outside the generated window (space or time).
    #[error("range error: {0}")]
    Range(String),

    /// A walk left the spatial window and extension was disabled.
    #[error("window exhausted: {0}")]
    WindowExhausted(String),

    /// A solver failed to meet its tolerance within its iteration cap.
    #[error("numerical failure: {context} (rate bound {rate_bound}, slice [{slice_start}, {slice_end}])")]
    Numerical {
        context: String,
        rate_bound: f64,
        slice_start: f64,
        slice_end: f64,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn range(msg: impl Into<String>) -> Self {
        Error::Range(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
