//! Error type shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A text input could not be parsed. `line` is 1-based.
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A model file has the wrong magic, version, or shape.
    #[error("{}: {message}", path.display())]
    ModelFormat { path: PathBuf, message: String },

    /// A label was not found in the vocabulary. `suggestions` is
    /// pre-formatted (possibly empty) display text.
    #[error("unknown {kind} label {label:?}{suggestions}")]
    UnknownLabel {
        kind: &'static str,
        label: String,
        suggestions: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Training produced a non-finite value.
    #[error("training diverged: {0}")]
    NonFinite(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::UnknownLabel { .. }
                | Error::InvalidInput(_)
                | Error::Config(_)
        )
    }
}
