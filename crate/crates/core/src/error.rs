//! Crate-wide error type.
//!
//! Library functions never panic on bad input; they return [`Error`] and the
//! CLI maps any of these to exit code 2 (usage errors from argument parsing
//! exit with 1 instead).

use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of its documented domain.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A function argument is out of its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A scene fails its structural checks (overlapping lead events, gap not
    /// larger than the vehicle length, ...).
    #[error("invalid scene `{scene_id}`: {reason}")]
    InvalidScene { scene_id: String, reason: String },

    /// A file declares a schema version this build does not understand.
    #[error("{path}: unsupported schema version {found} (this build reads version {supported})")]
    UnsupportedSchema {
        path: PathBuf,
        found: u32,
        supported: u32,
    },

    /// JSON that does not parse or does not match the expected shape.
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    /// An I/O failure, annotated with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A NaN or infinity surfaced mid-computation; the run is aborted rather
    /// than letting the poison propagate into artifacts.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Replay or report verification found an artifact whose stored summaries
    /// do not match its row-level data.
    #[error("verification mismatch in {path}: {detail}")]
    ReplayMismatch { path: PathBuf, detail: String },
}

impl Error {
    /// Wraps an I/O error with the path it concerns.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps a serde_json error with the path it concerns, keeping the
    /// line/column the parser reported.
    pub fn parse(path: impl Into<PathBuf>, err: &serde_json::Error) -> Self {
        Error::Parse {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
