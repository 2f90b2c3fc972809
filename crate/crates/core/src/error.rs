use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: i/o error: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("dimension mismatch: expected {expected}, found {found}{context}")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_cell(self, cell: impl Into<String>) -> Self {
        Error::Cell {
            cell: cell.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn dim(expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            expected,
            found,
            context: String::new(),
        }
    }

    /// Process exit code for the command-line runner: 2 configuration,
    /// 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Cell { source, .. } => source.exit_code(),
            Error::Numerical(_) | Error::DegenerateInput(_) => 4,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::DimensionMismatch { .. }
            | Error::Validation(_)
            | Error::InsufficientData(_)
            | Error::EmptyInput(_)
            | Error::OutOfRange(_)
            | Error::Json(_) => 3,
        }
    }
}
