//! Error type shared across the crate, with process exit-code mapping for
//! the CLI (0 ok, 2 usage, 3 data, 4 numeric).

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown {kind} id {id} (registry has {len} entries)")]
    Registry {
        kind: &'static str,
        id: usize,
        len: usize,
    },

    #[error("unsupported character {ch:?} (U+{code:04X}) in {context}")]
    UnsupportedChar {
        ch: char,
        code: u32,
        context: String,
    },

    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: String,
        expected: String,
        got: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("dataset{}: {message}", sample.as_ref().map(|s| format!(" sample {s}")).unwrap_or_default())]
    Data {
        sample: Option<String>,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("numeric failure at iteration {iteration}: {message}\n{snapshot}")]
    Numeric {
        iteration: u64,
        message: String,
        snapshot: String,
    },

    #[error("singular system in {context}: {message}")]
    Singular { context: String, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data(sample: Option<String>, message: impl Into<String>) -> Self {
        Error::Data {
            sample,
            message: message.into(),
        }
    }

    /// Exit code the CLI reports for this error. Unsupported characters are
    /// argument-validation failures (2); numeric failures get their own
    /// code (4); everything else is a data error (3).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::UnsupportedChar { .. } => 2,
            Error::Numeric { .. } | Error::Singular { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
