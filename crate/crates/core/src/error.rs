use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: reference to unknown {kind} id {id}")]
    DanglingReference {
        path: PathBuf,
        kind: &'static str,
        id: String,
    },

    #[error("items with empty text: {0:?}")]
    EmptyDocuments(Vec<String>),

    #[error("items without any taggable token: {0:?}")]
    Untaggable(Vec<String>),

    #[error("{kind} index {index} out of range (valid: 0..{len})")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        len: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite gradient in parameter block {0}")]
    NonFiniteGradient(String),

    #[error("non-finite loss at step {step} (batch users {users:?}, items {items:?})")]
    NonFiniteLoss {
        step: usize,
        users: Vec<usize>,
        items: Vec<usize>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("vocabulary hash mismatch: checkpoint {checkpoint}, corpus {corpus}")]
    VocabularyMismatch { checkpoint: String, corpus: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Malformed { .. } => "malformed_input",
            Error::DanglingReference { .. } => "dangling_reference",
            Error::EmptyDocuments(_) => "empty_documents",
            Error::Untaggable(_) => "untaggable_items",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::Shape(_) => "shape_mismatch",
            Error::Config(_) => "invalid_config",
            Error::Empty(_) => "empty_input",
            Error::NonFiniteGradient(_) => "non_finite_gradient",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Checkpoint(_) => "checkpoint",
            Error::VocabularyMismatch { .. } => "vocabulary_mismatch",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
