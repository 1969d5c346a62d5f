use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the translation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("format error: {0}")]
    Format(String),

    #[error("index {index} out of bounds for axis of length {len}")]
    Bounds { index: usize, len: usize },

    #[error("degenerate image: {0}")]
    DegenerateImage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("unsupported operation: {0}")]
    UnsupportedOperation(String),

    #[error("numerical error: {what}{}", location(.epoch, .batch))]
    Numerical {
        what: String,
        epoch: Option<usize>,
        batch: Option<usize>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn location(epoch: &Option<usize>, batch: &Option<usize>) -> String {
    match (epoch, batch) {
        (Some(e), Some(b)) => format!(" (epoch {e}, batch {b})"),
        (Some(e), None) => format!(" (epoch {e})"),
        _ => String::new(),
    }
}

impl Error {
    pub(crate) fn numerical(what: impl Into<String>) -> Self {
        Error::Numerical {
            what: what.into(),
            epoch: None,
            batch: None,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
