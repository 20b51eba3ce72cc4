use std::path::PathBuf;

/// Errors raised anywhere in the induction toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A line of an input file could not be decoded.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    /// Inputs violate a shape, uniqueness, or join contract.
    #[error("validation error: {0}")]
    Validation(String),
    /// A numeric precondition does not hold (zero norm, undefined score).
    #[error("domain error: {0}")]
    Domain(String),
    /// The run configuration is unusable (bad parameters, missing files).
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
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
            Error::Parse { .. } | Error::Validation(_) | Error::Domain(_) => 2,
            Error::Config(_) | Error::Io { .. } => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
