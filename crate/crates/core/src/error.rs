use std::fmt;

/// Errors surfaced by the attack / recovery pipeline.
#[derive(Debug)]
pub enum Error {
    /// Tensor or image dimensions do not match what an operation expects.
    Shape(String),
    /// An argument is outside its documented domain (class index, ratio, ...).
    InvalidArgument(String),
    /// A placement or template scan has no admissible position.
    Placement(String),
    /// Training or optimization produced a non-finite loss.
    Diverged(String),
    /// A persisted artifact is malformed or has the wrong version.
    Format(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Placement(msg) => write!(f, "placement error: {msg}"),
            Error::Diverged(msg) => write!(f, "diverged: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
