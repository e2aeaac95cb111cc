use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Numeric(String),
    #[error(transparent)]
    Core(#[from] clothlayer::Error),
}

impl CliError {
    /// Process exit code: 2 invalid input, 3 I/O, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Numeric(_) => 4,
            CliError::Core(e) => match e {
                clothlayer::Error::Io(_) => 3,
                clothlayer::Error::Numeric(_) => 4,
                _ => 2,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Invalid(msg.into()))
}

/// Attaches a path to I/O errors.
pub trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|source| CliError::Io { path: path.to_path_buf(), source })
    }
}

/// Core errors raised while reading or writing a file keep the path.
impl<T> IoContext<T> for clothlayer::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|e| match e {
            clothlayer::Error::Io(source) => CliError::Io { path: path.to_path_buf(), source },
            clothlayer::Error::Format(msg) => CliError::Invalid(format!("{}: {msg}", path.display())),
            other => CliError::Core(other),
        })
    }
}
