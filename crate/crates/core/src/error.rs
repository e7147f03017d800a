use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
///
/// Variants are grouped so that the command line can map them onto its
/// exit codes (config 2, data 3, numeric 4, checkpoint 5).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("incompatible checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Invalid(_) | Error::Shape(_) => 2,
            Error::Data(_) | Error::File { .. } | Error::Io(_) => 3,
            Error::Numeric(_) => 4,
            Error::Checkpoint(_) => 5,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
