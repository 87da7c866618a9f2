//! Masked hierarchical context fusion.
//!
//! Each branch turns the per-turn token states into one vector per
//! (slot, turn):
//!
//! 1. word-level slot attention over the tokens of every turn;
//! 2. a masked transformer over the resulting turn sequence, where the mask
//!    decides which earlier turns each turn may attend to;
//! 3. slot attention over the transformed turns inside the same window.
//!
//! The global branch uses the causal mask, the local branch the n-history
//! mask. A sigmoid gate mixes the two into the fused slot context.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{positions, PositionMode, TurnEncoding};
use crate::error::{ModelError, Result};
use crate::nn::{Attended, Linear, MultiHeadAttention, TransformerBlock};
use crate::tensor::{Graph, ParamStore, Role, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskKind {
    /// Turn i sees turns 1..=i.
    Global,
    /// Turn i sees turns max(1, i-n)..=i.
    Local(usize),
}

/// `T×T` matrix of 0 (attendable) and -inf (masked) entries.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskMatrix {
    pub kind: MaskKind,
    pub entries: Tensor,
}

impl MaskMatrix {
    pub fn turns(&self) -> usize {
        self.entries.dims2().0
    }

    pub fn is_open(&self, i: usize, j: usize) -> bool {
        self.entries.row(i)[j] == 0.0
    }

    /// Row `i` as a single-row mask.
    pub fn row(&self, i: usize) -> Tensor {
        Tensor::vector(self.entries.row(i).to_vec())
    }
}

impl fmt::Display for MaskMatrix {
    /// One line per row, entries rendered as `0` or `-inf`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.turns() {
            let row: Vec<&str> = self
                .entries
                .row(i)
                .iter()
                .map(|&v| if v == 0.0 { "0" } else { "-inf" })
                .collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

pub fn build_mask(turns: usize, kind: MaskKind) -> Result<MaskMatrix> {
    if turns == 0 {
        return Err(ModelError::Config("mask needs at least one turn".into()));
    }
    if let MaskKind::Local(0) = kind {
        return Err(ModelError::Config("history length n must be at least 1".into()));
    }
    let mut data = vec![f64::NEG_INFINITY; turns * turns];
    for i in 0..turns {
        let lo = match kind {
            MaskKind::Global => 0,
            MaskKind::Local(n) => i.saturating_sub(n),
        };
        for j in lo..=i {
            data[i * turns + j] = 0.0;
        }
    }
    Ok(MaskMatrix {
        kind,
        entries: Tensor::new(vec![turns, turns], data)?,
    })
}

/// Turns visible to the slot attention at turn t.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Window {
    FullPrefix,
    /// The last n+1 turns, i.e. `max(1, t-n)..=t`.
    History(usize),
}

impl Window {
    /// 0-based row range visible at 0-based turn `t`.
    pub fn range(self, t: usize) -> std::ops::Range<usize> {
        match self {
            Window::FullPrefix => 0..t + 1,
            Window::History(n) => t.saturating_sub(n)..t + 1,
        }
    }

    pub fn for_mask(kind: MaskKind) -> Self {
        match kind {
            MaskKind::Global => Window::FullPrefix,
            MaskKind::Local(n) => Window::History(n),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Layers N of the masked hierarchical transformer.
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    /// History length n of the local branch.
    pub history: usize,
    /// Share all branch parameters between the global and local paths.
    pub tie_paths: bool,
    /// Capacity of learned turn positions.
    pub max_turns: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            ff_dim: 64,
            history: 1,
            tie_paths: false,
            max_turns: 32,
        }
    }
}

/// Word attention, masked transformer and slot attention of one branch.
#[derive(Clone, Debug)]
pub struct ContextBranch {
    pub word_attention: MultiHeadAttention,
    pub layers: Vec<TransformerBlock>,
    pub slot_attention: MultiHeadAttention,
    pub position_embedding: Option<crate::tensor::ParamId>,
    pub positions: PositionMode,
    pub d_model: usize,
}

impl ContextBranch {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        cfg: &FusionConfig,
        positions: PositionMode,
        rng: &mut impl Rng,
    ) -> Self {
        let t = Role::Trainable;
        let word_attention = MultiHeadAttention::new(store, &format!("{name}.word_attn"), d, cfg.heads, t, rng);
        let layers = (0..cfg.layers)
            .map(|l| TransformerBlock::new(store, &format!("{name}.hier{l}"), d, cfg.heads, cfg.ff_dim, t, rng))
            .collect();
        let slot_attention = MultiHeadAttention::new(store, &format!("{name}.slot_attn"), d, cfg.heads, t, rng);
        let position_embedding = (positions == PositionMode::Learned).then(|| {
            store.add(
                format!("{name}.turn_position"),
                crate::nn::uniform_std(rng, cfg.max_turns, d, 0.5),
                t,
            )
        });
        Self {
            word_attention,
            layers,
            slot_attention,
            position_embedding,
            positions,
            d_model: d,
        }
    }

    /// Slot-name query `h_s [1×d]` attending over the tokens of one turn.
    pub fn word_attention(
        &self,
        g: &mut Graph,
        ps: &ParamStore,
        slot: Var,
        turn: &TurnEncoding,
        token_mask: Option<&Tensor>,
    ) -> Result<Attended> {
        Ok(self
            .word_attention
            .forward(g, ps, slot, turn.token_states, token_mask)?)
    }

    /// `m^0 = word_seq + PE`, then N masked transformer layers. Returns `m^N`.
    pub fn masked_hier_transform(
        &self,
        g: &mut Graph,
        ps: &ParamStore,
        word_seq: Var,
        mask: &MaskMatrix,
    ) -> Result<Var> {
        let (t, d) = g.value(word_seq).dims2();
        if t != mask.turns() {
            return Err(TensorError::Dimension {
                op: "masked_hier_transform",
                left: g.value(word_seq).shape().to_vec(),
                right: mask.entries.shape().to_vec(),
            }
            .into());
        }
        let mut m = word_seq;
        if let Some(pe) = positions(g, ps, self.positions, self.position_embedding, t, d)? {
            m = g.add(m, pe)?;
        }
        for layer in &self.layers {
            m = layer.forward(g, ps, m, Some(&mask.entries))?;
        }
        Ok(m)
    }

    /// Slot attention at 0-based turn `t` over the rows of `hier_out` inside
    /// `window`.
    pub fn slot_context(
        &self,
        g: &mut Graph,
        ps: &ParamStore,
        slot: Var,
        hier_out: Var,
        t: usize,
        window: Window,
    ) -> Result<Attended> {
        let r = window.range(t);
        let rows = g.slice_rows(hier_out, r.start, r.end)?;
        Ok(self.slot_attention.forward(g, ps, slot, rows, None)?)
    }

    /// Slot attention for every turn at once: the query is `h_s` repeated
    /// per turn and `mask` row i is the window of turn i.
    pub fn slot_contexts(
        &self,
        g: &mut Graph,
        ps: &ParamStore,
        slot: Var,
        hier_out: Var,
        mask: &MaskMatrix,
    ) -> Result<Attended> {
        let t = mask.turns();
        let ones = g.constant(Tensor::full(&[t, 1], 1.0));
        let query = g.matmul(ones, slot)?;
        Ok(self
            .slot_attention
            .forward(g, ps, query, hier_out, Some(&mask.entries))?)
    }

    /// Word attention for all turns in one call. `tokens` stacks the token
    /// states of every turn and row t of `block_mask` opens only the tokens
    /// of turn t.
    pub fn word_attention_all(
        &self,
        g: &mut Graph,
        ps: &ParamStore,
        slot: Var,
        tokens: Var,
        block_mask: &Tensor,
    ) -> Result<Var> {
        let t = block_mask.dims2().0;
        let ones = g.constant(Tensor::full(&[t, 1], 1.0));
        let query = g.matmul(ones, slot)?;
        Ok(self
            .word_attention
            .forward(g, ps, query, tokens, Some(block_mask))?
            .output)
    }

    /// Full branch over a dialogue.
    pub fn run(
        &self,
        g: &mut Graph,
        ps: &ParamStore,
        slot: Var,
        tokens: Var,
        block_mask: &Tensor,
        mask: &MaskMatrix,
    ) -> Result<BranchOutput> {
        let word_seq = self.word_attention_all(g, ps, slot, tokens, block_mask)?;
        let hier = self.masked_hier_transform(g, ps, word_seq, mask)?;
        let contexts = self.slot_contexts(g, ps, slot, hier, mask)?.output;
        Ok(BranchOutput {
            word_seq,
            hier,
            contexts,
        })
    }
}

/// `[T×ΣL]` mask over stacked token states: row t opens the non-`[PAD]`
/// tokens of turn t.
pub fn turn_block_mask(turn_ids: &[Vec<usize>], pad: usize) -> Tensor {
    let total: usize = turn_ids.iter().map(Vec::len).sum();
    let mut data = vec![f64::NEG_INFINITY; turn_ids.len() * total];
    let mut offset = 0;
    for (t, ids) in turn_ids.iter().enumerate() {
        for (j, &id) in ids.iter().enumerate() {
            if id != pad {
                data[t * total + offset + j] = 0.0;
            }
        }
        offset += ids.len();
    }
    Tensor::new(vec![turn_ids.len(), total], data).expect("non-empty turns")
}

#[derive(Clone, Copy, Debug)]
pub struct BranchOutput {
    pub word_seq: Var,
    pub hier: Var,
    pub contexts: Var,
}

/// Gate mixing global and local contexts elementwise.
#[derive(Clone, Debug)]
pub struct Gate {
    pub linear: Linear,
}

/// Graph handles of one fused slot context (rows are turns).
#[derive(Clone, Copy, Debug)]
pub struct SlotContext {
    pub local: Var,
    pub global: Var,
    pub gate: Var,
    pub fused: Var,
}

impl Gate {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut impl Rng) -> Self {
        Self {
            linear: Linear::new(store, name, 2 * d, d, true, Role::Trainable, rng),
        }
    }

    /// `gate = σ([global ⊕ local] W + b)`,
    /// `fused = gate ⊙ global + (1 - gate) ⊙ local`.
    pub fn fuse(&self, g: &mut Graph, ps: &ParamStore, global: Var, local: Var) -> Result<SlotContext> {
        let cat = g.concat_cols(&[global, local])?;
        let pre = self.linear.forward(g, ps, cat)?;
        let gate = g.sigmoid(pre);
        let a = g.mul(gate, global)?;
        let inv = g.one_minus(gate);
        let b = g.mul(inv, local)?;
        let fused = g.add(a, b)?;
        Ok(SlotContext {
            local,
            global,
            gate,
            fused,
        })
    }
}
