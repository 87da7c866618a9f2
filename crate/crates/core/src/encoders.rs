//! Turn encoder, frozen slot/value catalog encoder and positional encodings.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Ontology, TokenSequence, Vocabulary};
use crate::error::{ModelError, Result};
use crate::nn::{uniform_std, TransformerBlock};
use crate::tensor::{Graph, ParamId, ParamStore, Role, Tensor, TensorError, Var};

/// How token and turn positions are injected.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionMode {
    #[default]
    Sinusoidal,
    Learned,
    /// No positional signal; only for diagnostics.
    Disabled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub max_turn_tokens: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            heads: 4,
            layers: 2,
            ff_dim: 64,
            max_turn_tokens: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.max_turn_tokens < 3 {
            return Err(ModelError::Config("max_turn_tokens must be at least 3".into()));
        }
        Ok(())
    }
}

/// Sinusoidal encoding of a 0-based position:
/// `pe[2i] = sin(pos / 10000^(2i/d))`, `pe[2i+1] = cos(pos / 10000^(2i/d))`.
pub fn positional_encoding(pos: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| {
            let i2 = (j - j % 2) as f64;
            let angle = pos as f64 / 10000f64.powf(i2 / d as f64);
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Rows `0..n` of the sinusoidal encoding as an `[n×d]` tensor.
pub fn positional_table(n: usize, d: usize) -> Tensor {
    let data = (0..n).flat_map(|p| positional_encoding(p, d)).collect();
    Tensor::new(vec![n, d], data).expect("valid shape")
}

/// Position signal for `n` rows under `mode`, or `None` when disabled.
pub(crate) fn positions(
    g: &mut Graph,
    ps: &ParamStore,
    mode: PositionMode,
    learned: Option<ParamId>,
    n: usize,
    d: usize,
) -> Result<Option<Var>> {
    Ok(match (mode, learned) {
        (PositionMode::Disabled, _) => None,
        (PositionMode::Learned, Some(table)) => {
            let capacity = ps.get(table).value.dims2().0;
            if n > capacity {
                return Err(ModelError::Config(format!(
                    "sequence of {n} exceeds {capacity} learned positions"
                )));
            }
            let t = g.param(ps, table);
            let ids: Vec<usize> = (0..n).collect();
            Some(g.gather(t, &ids)?)
        }
        _ => Some(g.constant(positional_table(n, d))),
    })
}

/// Token embedding scale. Frozen encoders use a wider table so that the
/// `[CLS]` states of different texts sit further apart.
fn embedding_std(role: Role) -> f64 {
    match role {
        Role::Trainable => 1.0,
        Role::Frozen => 3.0,
    }
}

/// Per-token states of one turn plus the `[CLS]` summary.
#[derive(Clone, Copy, Debug)]
pub struct TurnEncoding {
    pub token_states: Var,
    pub pooled: Var,
}

/// Token + segment + position embedding followed by bidirectional
/// transformer blocks.
#[derive(Clone, Debug)]
pub struct TurnEncoder {
    pub token_embedding: ParamId,
    pub segment_embedding: ParamId,
    pub position_embedding: Option<ParamId>,
    pub blocks: Vec<TransformerBlock>,
    pub positions: PositionMode,
    pub d_model: usize,
    pub vocab_size: usize,
}

impl TurnEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &EncoderConfig,
        vocab_size: usize,
        positions: PositionMode,
        role: Role,
        rng: &mut impl Rng,
    ) -> Self {
        let d = cfg.d_model;
        let token_embedding = store.add(
            format!("{name}.token_embedding"),
            uniform_std(rng, vocab_size, d, embedding_std(role)),
            role,
        );
        let segment_embedding = store.add(format!("{name}.segment_embedding"), uniform_std(rng, 2, d, 0.5), role);
        let position_embedding = (positions == PositionMode::Learned).then(|| {
            store.add(
                format!("{name}.position_embedding"),
                uniform_std(rng, cfg.max_turn_tokens, d, 0.5),
                role,
            )
        });
        let blocks = (0..cfg.layers)
            .map(|l| TransformerBlock::new(store, &format!("{name}.layer{l}"), d, cfg.heads, cfg.ff_dim, role, rng))
            .collect();
        Self {
            token_embedding,
            segment_embedding,
            position_embedding,
            blocks,
            positions,
            d_model: d,
            vocab_size,
        }
    }

    pub fn encode(&self, g: &mut Graph, ps: &ParamStore, tokens: &TokenSequence) -> Result<TurnEncoding> {
        if let Some(&bad) = tokens.ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(TensorError::OutOfRange {
                op: "vocabulary",
                index: bad,
                extent: self.vocab_size,
            }
            .into());
        }
        let table = g.param(ps, self.token_embedding);
        let mut x = g.gather(table, &tokens.ids)?;
        let seg = g.param(ps, self.segment_embedding);
        let seg = g.gather(seg, &tokens.segments)?;
        x = g.add(x, seg)?;
        if let Some(pos) = positions(
            g,
            ps,
            self.positions,
            self.position_embedding,
            tokens.len(),
            self.d_model,
        )? {
            x = g.add(x, pos)?;
        }
        let mask = key_padding_mask(tokens);
        for block in &self.blocks {
            x = block.forward(g, ps, x, mask.as_ref())?;
        }
        let pooled = g.slice_rows(x, 0, 1)?;
        Ok(TurnEncoding {
            token_states: x,
            pooled,
        })
    }
}

/// Row mask excluding `[PAD]` keys, if any are present.
pub fn key_padding_mask(tokens: &TokenSequence) -> Option<Tensor> {
    if !tokens.ids.contains(&Vocabulary::PAD_ID) {
        return None;
    }
    let row = tokens
        .ids
        .iter()
        .map(|&i| {
            if i == Vocabulary::PAD_ID {
                f64::NEG_INFINITY
            } else {
                0.0
            }
        })
        .collect();
    Some(Tensor::vector(row))
}

/// Fixed slot-name and slot-value embeddings (`[CLS]` states of the frozen
/// encoder). Value rows follow ontology order.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotCatalog {
    pub slot_embeddings: BTreeMap<String, Tensor>,
    pub value_embeddings: BTreeMap<String, Tensor>,
}

impl SlotCatalog {
    /// SHA-256 over every embedding's bit pattern.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (slot, t) in self.slot_embeddings.iter().chain(&self.value_embeddings) {
            h.update(slot.as_bytes());
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn slot(&self, slot: &str) -> Option<&Tensor> {
        self.slot_embeddings.get(slot)
    }

    pub fn values(&self, slot: &str) -> Option<&Tensor> {
        self.value_embeddings.get(slot)
    }

    /// Smallest Euclidean distance between two values of the same slot.
    pub fn separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for m in self.value_embeddings.values() {
            let k = m.dims2().0;
            for i in 0..k {
                for j in i + 1..k {
                    let d = m
                        .row(i)
                        .iter()
                        .zip(m.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>();
                    best = best.min(d.sqrt());
                }
            }
        }
        best
    }
}

/// Draws `draws` random frozen encoders and keeps the one whose catalog has
/// the widest [`SlotCatalog::separation`]. Only the winner is added to
/// `store`.
#[allow(clippy::too_many_arguments)]
pub fn draw_catalog_encoder<R: Rng + Clone>(
    store: &mut ParamStore,
    name: &str,
    cfg: &EncoderConfig,
    positions: PositionMode,
    ontology: &Ontology,
    vocab: &Vocabulary,
    draws: usize,
    rng: &mut R,
) -> Result<(TurnEncoder, SlotCatalog)> {
    let mut best: Option<(f64, R)> = None;
    for _ in 0..draws.max(1) {
        let start = rng.clone();
        let mut scratch = ParamStore::new();
        let enc = TurnEncoder::new(&mut scratch, name, cfg, vocab.len(), positions, Role::Frozen, rng);
        let sep = encode_catalog(ontology, vocab, &enc, &scratch, cfg.max_turn_tokens)?.separation();
        if best.as_ref().is_none_or(|(b, _)| sep > *b) {
            best = Some((sep, start));
        }
    }
    let (_, mut winner) = best.expect("at least one draw");
    let enc = TurnEncoder::new(store, name, cfg, vocab.len(), positions, Role::Frozen, &mut winner);
    let catalog = encode_catalog(ontology, vocab, &enc, store, cfg.max_turn_tokens)?;
    Ok((enc, catalog))
}

/// Encodes every slot name and value as `[CLS] text [SEP]` with the frozen
/// encoder and keeps the `[CLS]` state. Runs without gradient tracking.
pub fn encode_catalog(
    ontology: &Ontology,
    vocab: &Vocabulary,
    encoder: &TurnEncoder,
    ps: &ParamStore,
    max_len: usize,
) -> Result<SlotCatalog> {
    let cls = |text: &str| -> Result<Vec<f64>> {
        let mut g = Graph::no_grad();
        let seq = vocab.tokenize_text(text, max_len);
        let enc = encoder.encode(&mut g, ps, &seq)?;
        Ok(g.value(enc.pooled).data().to_vec())
    };
    let d = encoder.d_model;
    let mut slot_embeddings = BTreeMap::new();
    let mut value_embeddings = BTreeMap::new();
    for (slot, values) in ontology.as_map() {
        slot_embeddings.insert(slot.clone(), Tensor::new(vec![1, d], cls(slot)?)?);
        let mut rows = Vec::with_capacity(values.len() * d);
        for v in values {
            rows.extend(cls(v)?);
        }
        value_embeddings.insert(slot.clone(), Tensor::new(vec![values.len(), d], rows)?);
    }
    Ok(SlotCatalog {
        slot_embeddings,
        value_embeddings,
    })
}
