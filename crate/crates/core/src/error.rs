use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("line {line}: non-monotone timestamp {t_ms} (previous {prev_ms})")]
    NonMonotoneTimestamp { line: usize, t_ms: f64, prev_ms: f64 },

    #[error("line {line}: sampling interval {found} ms differs from {expected} ms")]
    IntervalMismatch { line: usize, expected: f64, found: f64 },

    #[error("line {line}: invalid counter value `{value}` for {event}")]
    InvalidCount { line: usize, event: String, value: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("trace too short: {0}")]
    TooShort(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate covariance{}", .workload.as_ref().map(|w| format!(" in workload `{w}`")).unwrap_or_default())]
    DegenerateCovariance { workload: Option<String> },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("engine is {actual}, operation requires {expected}")]
    WrongMode { expected: &'static str, actual: &'static str },

    #[error("unknown strategy `{name}` (registered: {registered})")]
    UnknownStrategy { name: String, registered: String },

    #[error("timestamp {0} ms is not covered by ground truth")]
    UncoveredTimestamp(f64),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Whether the error comes from numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::DegenerateCovariance { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
