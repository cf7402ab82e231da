use std::path::PathBuf;

use crate::embedding::Space;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("numerical error: {0}")]
    Numeric(String),

    #[error("embedding space mismatch: {left:?} vs {right:?}")]
    SpaceMismatch { left: Space, right: Space },

    #[error("prompt client failed for source {source_prompt:?}, keyword {keyword:?}: {message}")]
    Client {
        source_prompt: String,
        keyword: String,
        message: String,
        retriable: bool,
    },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("non-finite loss at step {step}: {components}")]
    NonFiniteLoss { step: u64, components: String },

    #[error("media error for {path}: {message}")]
    Media { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn shape(message: impl Into<String>) -> Self {
        Error::Shape(message.into())
    }
}
