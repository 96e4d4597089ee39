//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input vector does not match the expected dimension.
    #[error("input length {got} does not match expected dimension {expected}")]
    InputShape { expected: usize, got: usize },

    /// A gradient vector is not aligned with a parameter vector.
    #[error("gradient length {got} does not match parameter count {expected}")]
    GradShape { expected: usize, got: usize },

    /// A caller-supplied value violates an operation's preconditions.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration value (dimensions, learning rates, mode wiring) is unusable.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A NaN or infinity surfaced where a finite value is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A score column has zero variance, so correlations are undefined.
    #[error("rater {rater} produced a zero-variance score column")]
    DegenerateColumn { rater: usize },

    /// A score fell outside the open interval (0, 1).
    #[error("score {value} outside (0, 1)")]
    ScoreDomain { value: f64 },

    /// A retention fraction selects no samples.
    #[error("retention fraction {fraction} retains no samples out of {n}")]
    DegenerateRetention { fraction: f64, n: usize },

    /// A persisted file failed to parse; `line` is 1-based.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// A rater checkpoint does not match the hash recorded in a score table.
    #[error("rater {capability} checkpoint hash mismatch: expected {expected}, found {found}")]
    Provenance {
        capability: usize,
        expected: String,
        found: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
