use std::path::PathBuf;

use thiserror::Error;

use crate::generation::GenError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record in a line-oriented file failed to parse or validate.
    #[error("{}:{line}: {message}", path.display())]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("malformed SQuAD document at `{path}`: {message}")]
    Squad { path: String, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("empty index")]
    EmptyIndex,

    #[error("missing embeddings for: {}", .0.join(", "))]
    MissingEmbeddings(Vec<String>),

    #[error("missing gold label for: {}", .0.join(", "))]
    MissingGold(Vec<String>),

    #[error("generation failed for {item}: {source}")]
    Generation {
        item: String,
        #[source]
        source: GenError,
    },

    #[error("embedder error: {0}")]
    Embedder(GenError),

    #[error("embedding failed for {}: {message}", ids.join(", "))]
    EmbedFailed { ids: Vec<String>, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
