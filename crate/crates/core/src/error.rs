use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {err}", path.display())]
    Io { path: PathBuf, err: std::io::Error },
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown entity id {0}")]
    UnknownEntity(usize),
    #[error("{0}")]
    InvalidInput(String),
    #[error("nli scorer failed: {0}")]
    Scorer(String),
    #[error("sample `{id}`: {inner}")]
    Sample { id: String, inner: Box<Error> },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            err: source,
        }
    }

    pub fn parse(file: &Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            file: file.display().to_string(),
            line,
            msg: msg.into(),
        }
    }

    pub fn in_sample(self, id: &str) -> Self {
        Error::Sample {
            id: id.to_string(),
            inner: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
