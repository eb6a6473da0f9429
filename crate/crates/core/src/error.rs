use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid architecture, schedule or scene configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller violated an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    /// A computation produced a non-finite value.
    #[error("numeric error: {message}")]
    Numeric {
        message: String,
        /// Batch index or training step at which the value appeared.
        index: Option<usize>,
    },

    /// Training diverged; carries the last finite model, serialized, when one exists.
    #[error("training diverged at step {step}")]
    Diverged {
        step: usize,
        last_good: Option<Vec<u8>>,
    },

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>, index: Option<usize>) -> Self {
        Error::Numeric {
            message: msg.into(),
            index,
        }
    }

    pub(crate) fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            what,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric { .. } | Error::Diverged { .. } => 3,
            Error::Usage(_) | Error::Config(_) => 2,
            Error::Format { .. } | Error::Io { .. } | Error::Image { .. } => 2,
        }
    }
}
