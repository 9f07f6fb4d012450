use std::path::PathBuf;

/// Errors raised anywhere in the occupancy pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: String, actual: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical error at coordinate {index}: {message}")]
    Numerical { index: usize, message: String },

    #[error("training error in parameter `{param}`: {message}")]
    Training { param: String, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("version error: {0}")]
    Version(String),

    #[error("scene generation error: {0}")]
    Generation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Dimension {
            expected: expected.into(),
            actual: actual.into(),
        }
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
}
