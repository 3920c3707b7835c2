use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An argument outside its admissible range (rates, windows, caps).
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("index {index} out of range for size {size}")]
    Index { index: usize, size: usize },

    /// NaN/Inf produced or consumed.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Caller violated an operation's contract.
    #[error("contract error: {0}")]
    Contract(String),

    /// Malformed input file, located by line.
    #[error("{}:{line}: {message}", source_name)]
    Format {
        source_name: String,
        line: usize,
        message: String,
    },

    /// Malformed binary file, located by byte offset.
    #[error("{}: at byte offset {offset}: {message}", source_name)]
    Binary {
        source_name: String,
        offset: u64,
        message: String,
    },

    /// Stored configuration disagrees with what the caller expects.
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn format(source_name: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
