use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CorpusError, Result};

/// Sentinel for an unassigned slot.
pub const NONE: &str = "none";
/// Sentinel for a slot the user explicitly does not care about.
pub const DONTCARE: &str = "dontcare";

/// Slot names mapped to their candidate values. Every slot carries the
/// [`NONE`] and [`DONTCARE`] sentinels exactly once; missing sentinels are
/// prepended on construction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, Vec<String>>", into = "BTreeMap<String, Vec<String>>")]
pub struct Ontology {
    slots: BTreeMap<String, Vec<String>>,
}

impl Ontology {
    pub fn new(slots: BTreeMap<String, Vec<String>>) -> Result<Self> {
        if slots.is_empty() {
            return Err(CorpusError::EmptyOntology);
        }
        let mut out = BTreeMap::new();
        for (slot, values) in slots {
            let mut seen = HashSet::new();
            for v in &values {
                if !seen.insert(v.as_str()) {
                    return Err(CorpusError::DuplicateValue { slot, value: v.clone() });
                }
            }
            let mut full = Vec::with_capacity(values.len() + 2);
            for sentinel in [NONE, DONTCARE] {
                if !seen.contains(sentinel) {
                    full.push(sentinel.to_string());
                }
            }
            full.extend(values);
            out.insert(slot, full);
        }
        Ok(Self { slots: out })
    }

    pub fn from_pairs<S: AsRef<str>>(pairs: &[(&str, &[S])]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|(s, vs)| (s.to_string(), vs.iter().map(|v| v.as_ref().to_string()).collect()))
                .collect(),
        )
    }

    /// Slot names in canonical (sorted) order.
    pub fn slots(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn values(&self, slot: &str) -> Option<&[String]> {
        self.slots.get(slot).map(Vec::as_slice)
    }

    pub fn value_index(&self, slot: &str, value: &str) -> Option<usize> {
        self.slots.get(slot)?.iter().position(|v| v == value)
    }

    pub fn slot_index(&self, slot: &str) -> Option<usize> {
        self.slots.keys().position(|s| s == slot)
    }

    pub fn contains_slot(&self, slot: &str) -> bool {
        self.slots.contains_key(slot)
    }

    /// Candidate values that are not sentinels.
    pub fn real_values(&self, slot: &str) -> Vec<&str> {
        self.values(slot)
            .unwrap_or_default()
            .iter()
            .map(String::as_str)
            .filter(|v| *v != NONE && *v != DONTCARE)
            .collect()
    }

    pub fn check(&self, slot: &str, value: &str, context: &str) -> Result<()> {
        let values = self.slots.get(slot).ok_or_else(|| CorpusError::UnknownSlot {
            slot: slot.to_string(),
            context: context.to_string(),
        })?;
        if !values.iter().any(|v| v == value) {
            return Err(CorpusError::UnknownValue {
                slot: slot.to_string(),
                value: value.to_string(),
                context: context.to_string(),
            });
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.slots).expect("ontology serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn as_map(&self) -> &BTreeMap<String, Vec<String>> {
        &self.slots
    }
}

impl TryFrom<BTreeMap<String, Vec<String>>> for Ontology {
    type Error = CorpusError;

    fn try_from(value: BTreeMap<String, Vec<String>>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Ontology> for BTreeMap<String, Vec<String>> {
    fn from(o: Ontology) -> Self {
        o.slots
    }
}
