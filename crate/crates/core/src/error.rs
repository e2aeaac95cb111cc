use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("point is outside the scene surface domain: {0}")]
    OutOfDomain(String),
    #[error("scan produced no points: {0}")]
    EmptyScan(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("layer {0} has no class with a defined IoU")]
    UndefinedLayer(usize),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
