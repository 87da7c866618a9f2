//! Distance-softmax slot-value head, recurrent state-operation decoder and
//! the joint loss.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BeliefState, Ontology, StateOp, DONTCARE, NONE};
use crate::error::{ModelError, Result};
use crate::nn::{GruCell, Linear};
use crate::tensor::{Graph, ParamStore, Role, Tensor, Var};

/// Candidate logits `-‖d - h_v‖₂` for every row of `d [m×d]` against every
/// value row of `values [k×d]`.
pub fn value_logits(g: &mut Graph, d_st: Var, values: Var) -> Result<Var> {
    let dist = g.row_distances(d_st, values)?;
    Ok(g.scale(dist, -1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlotValueDistribution {
    pub probs: Vec<f64>,
    pub chosen: usize,
}

impl SlotValueDistribution {
    pub fn from_logits(logits: &[f64]) -> Self {
        let probs = softmax(logits);
        Self {
            chosen: argmax(&probs),
            probs,
        }
    }

    /// `-ln p(gold)`.
    pub fn loss(&self, gold: usize) -> f64 {
        -self.probs[gold].ln()
    }
}

/// Softmax over the negative distances between `d_st` and each value row.
pub fn slot_value_dist(d_st: &Tensor, value_matrix: &Tensor) -> Result<SlotValueDistribution> {
    let mut g = Graph::no_grad();
    let q = g.constant(d_st.clone());
    let v = g.constant(value_matrix.clone());
    let logits = value_logits(&mut g, q, v)?;
    let logits = g.value(logits);
    if logits.dims2().0 != 1 {
        return Err(ModelError::Consistency(format!(
            "expected one query row, got shape {:?}",
            d_st.shape()
        )));
    }
    Ok(SlotValueDistribution::from_logits(logits.data()))
}

/// Max-shifted softmax of one row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Recurrent hidden state of one (slot, dialogue) operation stream.
#[derive(Clone, Debug, PartialEq)]
pub struct OpDecoderState {
    pub hidden: Tensor,
}

impl OpDecoderState {
    pub fn zero(dim: usize) -> Self {
        Self {
            hidden: Tensor::zeros(&[1, dim]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpDistribution {
    pub probs: Vec<f64>,
}

impl OpDistribution {
    pub fn from_logits(logits: &[f64]) -> Self {
        Self { probs: softmax(logits) }
    }

    pub fn chosen(&self) -> StateOp {
        StateOp::from_index(argmax(&self.probs)).expect("at most four classes")
    }
}

/// Gated recurrent cell over the local slot contexts followed by a linear
/// projection to the operation classes.
#[derive(Clone, Debug)]
pub struct OpDecoder {
    pub cell: GruCell,
    pub projection: Linear,
    pub hidden: usize,
    pub classes: usize,
}

impl OpDecoder {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, classes: usize, rng: &mut impl Rng) -> Self {
        Self {
            cell: GruCell::new(store, &format!("{name}.cell"), dim, dim, rng),
            projection: Linear::new(store, &format!("{name}.sop"), dim, classes, true, Role::Trainable, rng),
            hidden: dim,
            classes,
        }
    }

    /// One step: returns `(logits [1×K], hidden' [1×d])`.
    pub fn step(&self, g: &mut Graph, ps: &ParamStore, input: Var, hidden: Var) -> Result<(Var, Var)> {
        let h = self.cell.forward(g, ps, input, hidden)?;
        let logits = self.projection.forward(g, ps, h)?;
        Ok((logits, h))
    }

    /// Runs the stream over the rows of `inputs [T×d]` from a zero hidden
    /// state and returns the `[T×K]` logits.
    pub fn run(&self, g: &mut Graph, ps: &ParamStore, inputs: Var) -> Result<Var> {
        let turns = g.value(inputs).dims2().0;
        let mut h = g.constant(Tensor::zeros(&[1, self.hidden]));
        let mut rows = Vec::with_capacity(turns);
        for t in 0..turns {
            let x = g.slice_rows(inputs, t, t + 1)?;
            let (logits, next) = self.step(g, ps, x, h)?;
            rows.push(logits);
            h = next;
        }
        Ok(if rows.len() == 1 {
            rows[0]
        } else {
            g.concat_rows(&rows)?
        })
    }

    /// Inference-only step on plain tensors.
    pub fn decode_step(
        &self,
        ps: &ParamStore,
        c_loc: &Tensor,
        state: &OpDecoderState,
    ) -> Result<(OpDistribution, OpDecoderState)> {
        let mut g = Graph::no_grad();
        let x = g.constant(c_loc.clone());
        let h = g.constant(state.hidden.clone());
        let (logits, h) = self.step(&mut g, ps, x, h)?;
        Ok((
            OpDistribution::from_logits(g.value(logits).data()),
            OpDecoderState {
                hidden: g.value(h).clone(),
            },
        ))
    }
}

/// One per-(dialogue, turn, slot) loss contribution.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerm {
    pub dialogue: usize,
    pub turn: usize,
    pub slot: String,
    pub value: f64,
}

impl LossTerm {
    fn key(&self) -> (usize, usize, &str) {
        (self.dialogue, self.turn, &self.slot)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotLoss {
    pub l_sv: f64,
    pub l_sop: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_sv: f64,
    pub l_sop: f64,
    pub l_joint: f64,
    pub per_slot: BTreeMap<String, SlotLoss>,
}

/// Sums both term sets. An empty `sop` set stands for the value-only
/// ablation; otherwise both sets must cover the same indices.
pub fn joint_loss(sv: &[LossTerm], sop: &[LossTerm]) -> Result<LossReport> {
    if !sop.is_empty() {
        let a: BTreeSet<_> = sv.iter().map(LossTerm::key).collect();
        let b: BTreeSet<_> = sop.iter().map(LossTerm::key).collect();
        if a != b || a.len() != sv.len() || b.len() != sop.len() {
            return Err(ModelError::Consistency(format!(
                "slot-value terms ({}) and operation terms ({}) cover different indices",
                sv.len(),
                sop.len()
            )));
        }
    }
    let mut report = LossReport::default();
    for t in sv {
        report.l_sv += t.value;
        report.per_slot.entry(t.slot.clone()).or_default().l_sv += t.value;
    }
    for t in sop {
        report.l_sop += t.value;
        report.per_slot.entry(t.slot.clone()).or_default().l_sop += t.value;
    }
    report.l_joint = report.l_sv + report.l_sop;
    Ok(report)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Every slot takes its value-head argmax.
    #[default]
    Direct,
    /// The predicted operation decides whether the value head is consulted.
    OpGated,
}

/// Assembles the belief state of one turn from per-slot distributions.
pub fn decode_state(
    ontology: &Ontology,
    sv: &BTreeMap<String, SlotValueDistribution>,
    ops: &BTreeMap<String, OpDistribution>,
    prev: &BeliefState,
    mode: DecodeMode,
) -> Result<BeliefState> {
    let mut out = BeliefState::new();
    for slot in ontology.slots() {
        let missing = || ModelError::Consistency(format!("no distribution for slot {slot}"));
        let dist = sv.get(slot).ok_or_else(missing)?;
        let values = ontology.values(slot).expect("slot from ontology");
        let argmax_value = values
            .get(dist.chosen)
            .ok_or_else(|| ModelError::Consistency(format!("value index {} out of range for {slot}", dist.chosen)))?;
        let value = match mode {
            DecodeMode::Direct => argmax_value.as_str(),
            DecodeMode::OpGated => match ops.get(slot).ok_or_else(missing)?.chosen() {
                StateOp::Carryover => prev.get(slot),
                StateOp::Dontcare => DONTCARE,
                StateOp::Delete => NONE,
                StateOp::Update => argmax_value.as_str(),
            },
        };
        out.set(slot, value);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn term(turn: usize, slot: &str, value: f64) -> LossTerm {
        LossTerm {
            dialogue: 0,
            turn,
            slot: slot.into(),
            value,
        }
    }

    #[test]
    fn distances_one_two() {
        let d = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let v = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let p = slot_value_dist(&d, &v).unwrap();
        let e1 = (-1f64).exp();
        let e2 = (-2f64).exp();
        assert!((p.probs[0] - e1 / (e1 + e2)).abs() < 1e-12);
        assert!((p.probs[0] - 0.7311).abs() < 1e-4);
        assert_eq!(p.chosen, 0);
    }

    #[test]
    fn joint_adds_terms() {
        let r = joint_loss(&[term(0, "a", 2.0)], &[term(0, "a", 0.5)]).unwrap();
        assert_eq!(r.l_joint, 2.5);
        assert_eq!(r.per_slot["a"], SlotLoss { l_sv: 2.0, l_sop: 0.5 });
    }

    #[test]
    fn joint_rejects_mismatch() {
        assert!(joint_loss(&[term(0, "a", 1.0)], &[term(1, "a", 1.0)]).is_err());
        assert!(joint_loss(&[term(0, "a", 1.0)], &[term(0, "a", 1.0), term(0, "a", 1.0)]).is_err());
    }

    #[test]
    fn sv_only_has_zero_sop() {
        let r = joint_loss(&[term(0, "a", 1.5)], &[]).unwrap();
        assert_eq!(r.l_sop, 0.0);
        assert_eq!(r.l_joint, 1.5);
    }

    #[test]
    fn uniform_three_way_op_loss() {
        let d = OpDistribution::from_logits(&[0.0, 0.0, 0.0]);
        assert!((-d.probs[0].ln() - 3f64.ln()).abs() < 1e-15);
    }
}
