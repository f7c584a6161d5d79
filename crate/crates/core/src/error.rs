use std::path::PathBuf;

use crate::dataset::Intent;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed JSON: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("line {line}: label arity {got}, expected 10")]
    LabelArity { line: usize, got: usize },

    #[error("line {line}: label values must be 0 or 1, got {value}")]
    LabelValue { line: usize, value: u64 },

    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },

    #[error("line {line}: empty {field}")]
    EmptyField { line: usize, field: &'static str },

    #[error("eval fraction {0} outside (0, 1)")]
    InvalidFraction(f64),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("class {0} has no positive instances")]
    NoPositives(Intent),

    #[error("unclosed brace opened at byte {offset}")]
    UnclosedBrace { offset: usize },

    #[error("unmatched closing brace at byte {offset}")]
    UnmatchedCloseBrace { offset: usize },

    #[error("vocabulary size {0} below the 261-token floor")]
    VocabTooSmall(usize),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },

    #[error("malformed vocabulary file: {0}")]
    VocabFormat(String),

    #[error("sequence length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("sequence has no maskable tokens")]
    NothingToMask,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
