use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A malformed cell or line in a text input. `row` is the 1-based data
    /// row (header excluded), `col` the 1-based column when known.
    #[error("row {row}{}: {msg}", col.map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        row: usize,
        col: Option<usize>,
        msg: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("format: {0}")]
    Format(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("non-finite value produced by layer {index} ({name})")]
    NonFinite { index: usize, name: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(row: usize, col: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Parse {
            row,
            col,
            msg: msg.into(),
        }
    }
}
