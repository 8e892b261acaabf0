use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("relation count mismatch: expected K={expected}, found K={found}")]
    RelationCountMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty bag")]
    EmptyBag,

    #[error("graph contains live dropout; freeze the dropout masks before gradient checking")]
    LiveDropout,

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("line {line}: unknown relation label {label:?}")]
    UnknownRelation { line: usize, label: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("instance rejected: {0}")]
    Rejected(String),

    #[error("embedding dimension mismatch: file has {found}, vocabulary expects {expected}")]
    EmbeddingDim { expected: usize, found: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
