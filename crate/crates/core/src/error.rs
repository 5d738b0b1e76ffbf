use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed AST JSON: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: invalid AST structure: {message}")]
    Structure { line: usize, message: String },

    #[error("a program must contain at least one node")]
    EmptyAst,

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("unknown node type `{0}` (the type vocabulary is closed)")]
    UnknownType(String),

    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss((usize, usize)),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid prefix: {0}")]
    InvalidPrefix(String),

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("id {id} out of range for {what} vocabulary of size {size}")]
    IdOutOfRange {
        what: &'static str,
        id: usize,
        size: usize,
    },

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
