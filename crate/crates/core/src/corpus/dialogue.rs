use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{context, CorpusError, Ontology, Result, StateOp, NONE};

/// Slot assignments after a turn. Slots absent from the map are [`NONE`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "BTreeMap<String, String>", into = "BTreeMap<String, String>")]
pub struct BeliefState(BTreeMap<String, String>);

impl BeliefState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, slot: &str) -> &str {
        self.0.get(slot).map(String::as_str).unwrap_or(NONE)
    }

    /// Assigning [`NONE`] removes the slot.
    pub fn set(&mut self, slot: impl Into<String>, value: impl Into<String>) {
        let (slot, value) = (slot.into(), value.into());
        if value == NONE {
            self.0.remove(&slot);
        } else {
            self.0.insert(slot, value);
        }
    }

    pub fn with(mut self, slot: &str, value: &str) -> Self {
        self.set(slot, value);
        self
    }

    /// Value-bearing assignments in slot order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self, ontology: &Ontology, context: &str) -> Result<()> {
        self.iter().try_for_each(|(s, v)| ontology.check(s, v, context))
    }
}

impl From<BTreeMap<String, String>> for BeliefState {
    fn from(map: BTreeMap<String, String>) -> Self {
        Self(map.into_iter().filter(|(_, v)| v != NONE).collect())
    }
}

impl From<BeliefState> for BTreeMap<String, String> {
    fn from(b: BeliefState) -> Self {
        b.0
    }
}

impl<'a> FromIterator<(&'a str, &'a str)> for BeliefState {
    fn from_iter<I: IntoIterator<Item = (&'a str, &'a str)>>(iter: I) -> Self {
        let mut b = BeliefState::new();
        for (s, v) in iter {
            b.set(s, v);
        }
        b
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    #[serde(default)]
    pub system: String,
    pub user: String,
    #[serde(default)]
    pub belief: BeliefState,
    /// Per-slot operation annotations, present once derived.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ops: Option<BTreeMap<String, StateOp>>,
}

impl Turn {
    pub fn new(system: impl Into<String>, user: impl Into<String>, belief: BeliefState) -> Self {
        Self {
            system: system.into(),
            user: user.into(),
            belief,
            ops: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    pub fn new(id: impl Into<String>, turns: Vec<Turn>) -> Self {
        Self { id: id.into(), turns }
    }

    pub fn beliefs(&self) -> impl Iterator<Item = &BeliefState> {
        self.turns.iter().map(|t| &t.belief)
    }

    pub fn validate(&self, ontology: &Ontology) -> Result<()> {
        if self.turns.is_empty() {
            return Err(CorpusError::NoTurns {
                dialogue: self.id.clone(),
            });
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let ctx = context(&self.id, i + 1);
            turn.belief.validate(ontology, &ctx)?;
            if let Some(ops) = &turn.ops {
                for slot in ops.keys() {
                    if !ontology.contains_slot(slot) {
                        return Err(CorpusError::UnknownSlot {
                            slot: slot.clone(),
                            context: ctx,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}
