use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CorpusError, Dialogue, Ontology, Result, Turn};

/// On-disk corpus: `{"ontology": {slot: [values]}, "dialogues": [...]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusFile {
    pub ontology: Ontology,
    pub dialogues: Vec<Dialogue>,
}

impl CorpusFile {
    pub fn new(ontology: Ontology, dialogues: Vec<Dialogue>) -> Self {
        Self { ontology, dialogues }
    }

    /// Parses and validates a corpus. Record-level problems are reported
    /// with the dialogue id and the 1-based turn index.
    pub fn from_json(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text)?;
        let ontology_value = root.get("ontology").cloned().ok_or_else(|| CorpusError::Parse {
            dialogue: String::new(),
            turn: None,
            message: "missing \"ontology\"".into(),
        })?;
        let ontology: Ontology = serde_json::from_value(ontology_value)?;
        let records = match root.get("dialogues") {
            Some(Value::Array(a)) => a,
            _ => {
                return Err(CorpusError::Parse {
                    dialogue: String::new(),
                    turn: None,
                    message: "missing \"dialogues\" array".into(),
                })
            }
        };
        let mut dialogues = Vec::with_capacity(records.len());
        for (i, record) in records.iter().enumerate() {
            let id = match record.get("id") {
                Some(Value::String(s)) => s.clone(),
                _ => {
                    return Err(CorpusError::Parse {
                        dialogue: format!("#{i}"),
                        turn: None,
                        message: "missing string \"id\"".into(),
                    })
                }
            };
            let Some(Value::Array(raw_turns)) = record.get("turns") else {
                return Err(CorpusError::Parse {
                    dialogue: id,
                    turn: None,
                    message: "missing \"turns\" array".into(),
                });
            };
            let mut turns = Vec::with_capacity(raw_turns.len());
            for (t, raw) in raw_turns.iter().enumerate() {
                let turn: Turn = serde_json::from_value(raw.clone()).map_err(|e| CorpusError::Parse {
                    dialogue: id.clone(),
                    turn: Some(t + 1),
                    message: e.to_string(),
                })?;
                turns.push(turn);
            }
            let dialogue = Dialogue::new(id, turns);
            dialogue.validate(&ontology)?;
            dialogues.push(dialogue);
        }
        Ok(Self::new(ontology, dialogues))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("corpus serializes")
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<CorpusFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    CorpusFile::from_json(&text)
}

pub fn save_corpus(corpus: &CorpusFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, corpus.to_json() + "\n").map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}
