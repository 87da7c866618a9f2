use thiserror::Error;

use crate::corpus::CorpusError;
use crate::tensor::TensorError;

/// Errors raised while building or running the model.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("internal consistency error: {0}")]
    Consistency(String),
    #[error("ontology hash mismatch: checkpoint has {expected}, corpus has {found}")]
    OntologyMismatch { expected: String, found: String },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
}

pub type Result<T> = std::result::Result<T, ModelError>;
