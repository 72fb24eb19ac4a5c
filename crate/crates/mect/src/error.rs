use std::fmt;
use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by the loaders, the tensor engine, and the pipeline.
#[derive(Debug)]
pub enum Error {
    /// Two tensors could not be combined; both shapes are reported.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A tensor had an invalid shape for the requested operation.
    InvalidShape { op: &'static str, shape: Vec<usize> },
    /// An API contract was violated (e.g. backward on a non-scalar loss).
    Contract(String),
    /// A configuration value is out of range or inconsistent.
    Config(String),
    /// A sentence exceeds the configured maximum lattice length.
    Capacity { len: usize, max_len: usize },
    /// A text input could not be parsed; 1-based line number included.
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    /// An I/O failure, with the path that was being accessed.
    Io { path: PathBuf, source: std::io::Error },
    /// A checkpoint file was malformed or inconsistent with the model.
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, message: message.into() }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch: {left:?} vs {right:?}")
            }
            Error::InvalidShape { op, shape } => {
                write!(f, "{op}: invalid shape {shape:?}")
            }
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Capacity { len, max_len } => {
                write!(f, "lattice length {len} exceeds max_len {max_len}")
            }
            Error::Parse { path, line, message } => {
                write!(f, "{}:{line}: {message}", path.display())
            }
            Error::Io { path, source } => {
                write!(f, "{}: {source}", path.display())
            }
            Error::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
