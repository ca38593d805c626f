use std::io;

use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Variants are grouped so the CLI can map them onto stable exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    Model(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("trial {index} (seed {seed}) failed: {source}")]
    Trial {
        index: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for CLI exit codes and error prefixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Numeric,
    Io,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 3,
            ErrorCategory::Numeric => 4,
            ErrorCategory::Io => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Numeric => "numeric",
            ErrorCategory::Io => "io",
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Model(_) | Error::Config(_) | Error::Shape(_) | Error::Index(_) => {
                ErrorCategory::Config
            }
            Error::Numeric(_) => ErrorCategory::Numeric,
            Error::Trial { source, .. } => source.category(),
            Error::Io(_) => ErrorCategory::Io,
            Error::Json(e) if e.is_io() => ErrorCategory::Io,
            Error::Json(_) => ErrorCategory::Config,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
