use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes shared by every command.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const MISSING_INPUT: u8 = 2;
    pub const PAIRING: u8 = 3;
    pub const USAGE: u8 = 64;
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing input: {}", .0.display())]
    Missing(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: format error: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("results are not paired: {0}")]
    Pairing(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] kanmix_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        let path = path.into();
        if source.kind() == io::ErrorKind::NotFound {
            Error::Missing(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Missing(_) => exit::MISSING_INPUT,
            Error::Pairing(_) => exit::PAIRING,
            Error::Usage(_) => exit::USAGE,
            _ => exit::FAILURE,
        }
    }
}
