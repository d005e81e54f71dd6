use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("sequence structure error at frame index {index}: {reason}")]
    Structural { index: usize, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty initial mask")]
    EmptyInitialMask,

    #[error("read before first write")]
    ReadBeforeWrite,

    #[error("cannot evict: only permanent entries present")]
    CannotEvict,

    #[error("sequencing error: frame index {got} is not after last processed index {last}")]
    Sequencing { got: usize, last: usize },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad caller input (files, flags, shapes) as
    /// opposed to failures while running the pipeline.
    pub fn is_invalid_input(&self) -> bool {
        matches!(
            self,
            Error::Format(_)
                | Error::Validation(_)
                | Error::Structural { .. }
                | Error::Config(_)
                | Error::EmptyInitialMask
                | Error::Json { .. }
                | Error::Io { .. }
        )
    }
}
