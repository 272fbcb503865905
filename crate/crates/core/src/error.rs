use std::path::PathBuf;

use thiserror::Error;

use crate::formula::Kind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate row for ({date}, {symbol})")]
    DuplicateKey { date: String, symbol: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("illegal token {token} at index {index} (stack {stack:?})")]
    IllegalToken {
        index: usize,
        token: String,
        stack: Vec<Kind>,
    },

    #[error("cannot parse formula {input:?}: {message}")]
    Formula { input: String, message: String },

    #[error("feature `{0}` is not present in the panel")]
    MissingFeature(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("pool error: {0}")]
    Pool(String),

    #[error("non-finite value in {context} at step {step}")]
    NonFinite { context: &'static str, step: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
