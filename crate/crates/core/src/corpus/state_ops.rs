use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{context, BeliefState, CorpusError, Dialogue, Ontology, Result, DONTCARE, NONE};

/// Per-slot transition between consecutive belief states.
///
/// The class index order `[CARRYOVER, DONTCARE, UPDATE, DELETE]` is the
/// layout of the operation head's output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StateOp {
    Carryover,
    Dontcare,
    Update,
    Delete,
}

impl StateOp {
    pub const ALL: [StateOp; 4] = [StateOp::Carryover, StateOp::Dontcare, StateOp::Update, StateOp::Delete];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn num_classes(four_class: bool) -> usize {
        if four_class {
            4
        } else {
            3
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StateOp::Carryover => "CARRYOVER",
            StateOp::Dontcare => "DONTCARE",
            StateOp::Update => "UPDATE",
            StateOp::Delete => "DELETE",
        }
    }
}

impl fmt::Display for StateOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StateOp {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| CorpusError::InvalidArgument(format!("unknown state operation {s:?}")))
    }
}

fn op_for(prev: &str, cur: &str, four_class: bool) -> StateOp {
    if prev == cur {
        StateOp::Carryover
    } else if cur == DONTCARE {
        StateOp::Dontcare
    } else if cur == NONE {
        if four_class {
            StateOp::Delete
        } else {
            StateOp::Update
        }
    } else {
        StateOp::Update
    }
}

/// Operation label for every ontology slot between `prev` and `cur`.
pub fn derive_state_ops(
    ontology: &Ontology,
    prev: &BeliefState,
    cur: &BeliefState,
    four_class: bool,
) -> Result<BTreeMap<String, StateOp>> {
    prev.validate(ontology, "")?;
    cur.validate(ontology, "")?;
    Ok(ontology
        .slots()
        .map(|s| (s.to_string(), op_for(prev.get(s), cur.get(s), four_class)))
        .collect())
}

/// Operations for each turn of a dialogue; turn 1 is compared against the
/// empty state.
pub fn dialogue_state_ops(
    ontology: &Ontology,
    dialogue: &Dialogue,
    four_class: bool,
) -> Result<Vec<BTreeMap<String, StateOp>>> {
    let empty = BeliefState::new();
    let mut prev = &empty;
    let mut out = Vec::with_capacity(dialogue.turns.len());
    for (i, turn) in dialogue.turns.iter().enumerate() {
        let ctx = context(&dialogue.id, i + 1);
        prev.validate(ontology, &ctx)?;
        turn.belief.validate(ontology, &ctx)?;
        out.push(
            ontology
                .slots()
                .map(|s| (s.to_string(), op_for(prev.get(s), turn.belief.get(s), four_class)))
                .collect(),
        );
        prev = &turn.belief;
    }
    Ok(out)
}

/// Copy of `dialogue` with every turn's `ops` annotation filled in.
pub fn annotate_ops(ontology: &Ontology, dialogue: &Dialogue, four_class: bool) -> Result<Dialogue> {
    let ops = dialogue_state_ops(ontology, dialogue, four_class)?;
    let mut out = dialogue.clone();
    for (turn, ops) in out.turns.iter_mut().zip(ops) {
        turn.ops = Some(ops);
    }
    Ok(out)
}

/// Rebuilds belief states from all-none by applying `ops`. UPDATE takes its
/// written value from the matching entry of `values`.
pub fn replay_ops(ops: &[BTreeMap<String, StateOp>], values: &[BeliefState]) -> Vec<BeliefState> {
    let mut state = BeliefState::new();
    let mut out = Vec::with_capacity(ops.len());
    for (turn_ops, written) in ops.iter().zip(values) {
        for (slot, op) in turn_ops {
            match op {
                StateOp::Carryover => {}
                StateOp::Dontcare => state.set(slot.as_str(), DONTCARE),
                StateOp::Delete => state.set(slot.as_str(), NONE),
                StateOp::Update => state.set(slot.as_str(), written.get(slot)),
            }
        }
        out.push(state.clone());
    }
    out
}
