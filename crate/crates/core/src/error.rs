use std::path::PathBuf;

use thiserror::Error;

use crate::TokenId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid record: {0}")]
    Record(String),
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: TokenId, size: usize },
    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("non-finite value at timestep {timestep} (token {token:?})")]
    NonFinite {
        timestep: usize,
        token: Option<TokenId>,
    },
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
