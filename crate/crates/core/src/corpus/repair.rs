use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Dialogue, Ontology, StateOp, NONE};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRepair {
    /// Value-bearing (turn, slot) assignments after repair.
    pub total: usize,
    /// Assignments restored from the previous turn.
    pub modified: usize,
}

/// Per-slot repair counts, serialized as `{slot: {"total", "modified"}}`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RepairReport {
    pub slots: BTreeMap<String, SlotRepair>,
}

impl RepairReport {
    /// Report with a zeroed row for every ontology slot.
    pub fn for_ontology(ontology: &Ontology) -> Self {
        Self {
            slots: ontology
                .slots()
                .map(|s| (s.to_string(), SlotRepair::default()))
                .collect(),
        }
    }

    pub fn total_modified(&self) -> usize {
        self.slots.values().map(|s| s.modified).sum()
    }

    pub fn merge(&mut self, other: &RepairReport) {
        for (slot, r) in &other.slots {
            let e = self.slots.entry(slot.clone()).or_default();
            e.total += r.total;
            e.modified += r.modified;
        }
    }
}

/// Restores values that vanish without an explicit removal.
///
/// Sweeping forward, a slot holding a value at turn t-1 and none at turn t
/// is given the t-1 value again. In four-class mode a turn whose `ops`
/// annotation marks the slot DELETE keeps its removal.
pub fn repair_inheritance(dialogue: &Dialogue, four_class: bool) -> (Dialogue, RepairReport) {
    let mut out = dialogue.clone();
    let mut report = RepairReport::default();
    for t in 1..out.turns.len() {
        let prev = out.turns[t - 1].belief.clone();
        let turn = &mut out.turns[t];
        for (slot, value) in prev.iter() {
            if turn.belief.get(slot) != NONE {
                continue;
            }
            let deleted = four_class
                && turn
                    .ops
                    .as_ref()
                    .and_then(|ops| ops.get(slot))
                    .is_some_and(|op| *op == StateOp::Delete);
            if deleted {
                continue;
            }
            turn.belief.set(slot, value);
            report.slots.entry(slot.to_string()).or_default().modified += 1;
        }
    }
    for turn in &out.turns {
        for (slot, _) in turn.belief.iter() {
            report.slots.entry(slot.to_string()).or_default().total += 1;
        }
    }
    (out, report)
}

/// Repairs every dialogue and aggregates one report over all ontology slots.
pub fn repair_corpus(ontology: &Ontology, dialogues: &[Dialogue], four_class: bool) -> (Vec<Dialogue>, RepairReport) {
    let mut report = RepairReport::for_ontology(ontology);
    let repaired = dialogues
        .iter()
        .map(|d| {
            let (d, r) = repair_inheritance(d, four_class);
            report.merge(&r);
            d
        })
        .collect();
    (repaired, report)
}
