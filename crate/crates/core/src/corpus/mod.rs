//! Task data model, label procedures and corpus plumbing.
//!
//! A corpus is an [`Ontology`] plus annotated [`Dialogue`]s. Belief states
//! store only value-bearing slots; an absent slot reads as [`NONE`].

mod dialogue;
mod generator;
mod io;
mod ontology;
mod repair;
mod state_ops;
mod tokenizer;

pub use dialogue::{BeliefState, Dialogue, Turn};
pub use generator::{demo_ontology, generate_corpus, GenShape};
pub use io::{load_corpus, save_corpus, CorpusFile};
pub use ontology::{Ontology, DONTCARE, NONE};
pub use repair::{repair_corpus, repair_inheritance, RepairReport, SlotRepair};
pub use state_ops::{annotate_ops, derive_state_ops, dialogue_state_ops, replay_ops, StateOp};
pub use tokenizer::{split_words, TokenSequence, Vocabulary, CLS, PAD, SEP, UNK};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("ontology has no slots")]
    EmptyOntology,
    #[error("slot {slot} has no candidate values")]
    EmptySlot { slot: String },
    #[error("duplicate value {value:?} in slot {slot}")]
    DuplicateValue { slot: String, value: String },
    #[error("unknown slot {slot:?}{context}")]
    UnknownSlot { slot: String, context: String },
    #[error("value {value:?} is not a candidate of slot {slot:?}{context}")]
    UnknownValue {
        slot: String,
        value: String,
        context: String,
    },
    #[error("dialogue {dialogue:?} has no turns")]
    NoTurns { dialogue: String },
    #[error("malformed record in dialogue {dialogue:?}{}: {message}", turn.map(|t| format!(" turn {t}")).unwrap_or_default())]
    Parse {
        dialogue: String,
        turn: Option<usize>,
        message: String,
    },
    #[error("malformed corpus file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

pub(crate) fn context(dialogue: &str, turn: usize) -> String {
    format!(" (dialogue {dialogue:?}, turn {turn})")
}
