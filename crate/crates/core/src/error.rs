use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents that do not fit together.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid hyperparameters or configuration files.
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Semantically invalid data (bad labels, mismatched clip ids, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),

    #[error("checkpoint has bad magic bytes")]
    BadMagic,

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("architecture mismatch: checkpoint fingerprint {found:#010x}, expected {expected:#010x}")]
    ArchitectureMismatch { expected: u32, found: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dimension(_) => 1,
            Error::Parse { .. } | Error::Data(_) | Error::Io { .. } | Error::MissingGrad(_) => 2,
            Error::BadMagic
            | Error::UnsupportedVersion(_)
            | Error::ArchitectureMismatch { .. }
            | Error::CorruptCheckpoint(_)
            | Error::TensorShapeMismatch { .. } => 3,
        }
    }
}
