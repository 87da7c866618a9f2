//! The full tracker: shared turn encoder, global and local context branches,
//! gate fusion, distance-softmax value head and operation decoder.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{dialogue_state_ops, BeliefState, Dialogue, Ontology, StateOp, TokenSequence, Vocabulary};
use crate::encoders::{
    draw_catalog_encoder, encode_catalog, EncoderConfig, PositionMode, SlotCatalog, TurnEncoder, TurnEncoding,
};
use crate::error::{ModelError, Result};
use crate::fusion::{build_mask, turn_block_mask, ContextBranch, FusionConfig, Gate, MaskKind, SlotContext};
use crate::heads::{
    decode_state, value_logits, DecodeMode, LossTerm, OpDecoder, OpDistribution, SlotValueDistribution,
};
use crate::tensor::{Graph, ParamStore, Role, Tensor, Var};

/// Random frozen encoders tried per model; the best-separated catalog wins.
pub const CATALOG_DRAWS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub fusion: FusionConfig,
    /// Adds DELETE as a fourth operation class.
    pub four_class: bool,
    pub positions: PositionMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            fusion: FusionConfig::default(),
            four_class: false,
            positions: PositionMode::Sinusoidal,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let f = &self.fusion;
        if f.heads == 0 || !self.encoder.d_model.is_multiple_of(f.heads) {
            return Err(ModelError::Config(format!(
                "d_model {} must be a multiple of fusion heads {}",
                self.encoder.d_model, f.heads
            )));
        }
        if f.history == 0 {
            return Err(ModelError::Config("history length n must be at least 1".into()));
        }
        if f.max_turns == 0 {
            return Err(ModelError::Config("max_turns must be at least 1".into()));
        }
        Ok(())
    }

    pub fn op_classes(&self) -> usize {
        StateOp::num_classes(self.four_class)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    Joint,
    /// Value head only; the operation decoder is not run.
    SvOnly,
}

/// Model-ready view of one dialogue. Gold indices are `[slot][turn]` in
/// ontology slot order.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDialogue {
    pub tokens: Vec<TokenSequence>,
    pub gold_values: Vec<Vec<usize>>,
    pub gold_ops: Vec<Vec<usize>>,
}

impl EncodedDialogue {
    pub fn turns(&self) -> usize {
        self.tokens.len()
    }
}

/// Graph handles produced for one slot over all turns (rows are turns).
#[derive(Clone, Copy, Debug)]
pub struct SlotForward {
    pub context: SlotContext,
    pub value_logits: Var,
    pub op_logits: Option<Var>,
}

pub struct DialogueForward {
    pub turns: Vec<TurnEncoding>,
    pub slots: Vec<SlotForward>,
}

/// Loss handle plus the per-term breakdown used for reporting.
pub struct DialogueLoss {
    pub total: Var,
    pub sv_terms: Vec<LossTerm>,
    pub sop_terms: Vec<LossTerm>,
}

#[derive(Clone, Debug)]
pub struct DstModel {
    pub config: ModelConfig,
    pub ontology: Ontology,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub catalog_encoder: TurnEncoder,
    pub turn_encoder: TurnEncoder,
    pub global: ContextBranch,
    /// `None` when the paths are tied and the global branch serves both.
    pub local: Option<ContextBranch>,
    pub gate: Gate,
    pub decoder: OpDecoder,
    pub catalog: SlotCatalog,
    slot_names: Vec<String>,
}

impl DstModel {
    pub fn new(config: ModelConfig, ontology: Ontology, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.encoder.d_model;
        let mut cat_rng = ChaCha8Rng::seed_from_u64(seed);
        cat_rng.set_stream(1);
        let (catalog_encoder, catalog) = draw_catalog_encoder(
            &mut store,
            "catalog",
            &config.encoder,
            config.positions,
            &ontology,
            &vocab,
            CATALOG_DRAWS,
            &mut cat_rng,
        )?;
        let turn_encoder = TurnEncoder::new(
            &mut store,
            "turn",
            &config.encoder,
            vocab.len(),
            config.positions,
            Role::Trainable,
            &mut rng,
        );
        let global = ContextBranch::new(&mut store, "global", d, &config.fusion, config.positions, &mut rng);
        let local = (!config.fusion.tie_paths)
            .then(|| ContextBranch::new(&mut store, "local", d, &config.fusion, config.positions, &mut rng));
        let gate = Gate::new(&mut store, "gate", d, &mut rng);
        let decoder = OpDecoder::new(&mut store, "decoder", d, config.op_classes(), &mut rng);
        let slot_names = ontology.slots().map(String::from).collect();
        Ok(Self {
            config,
            ontology,
            vocab,
            store,
            catalog_encoder,
            turn_encoder,
            global,
            local,
            gate,
            decoder,
            catalog,
            slot_names,
        })
    }

    pub fn local_branch(&self) -> &ContextBranch {
        self.local.as_ref().unwrap_or(&self.global)
    }

    pub fn slot_names(&self) -> &[String] {
        &self.slot_names
    }

    /// Recomputes the frozen catalog from the stored frozen weights.
    pub fn refresh_catalog(&mut self) -> Result<()> {
        self.catalog = encode_catalog(
            &self.ontology,
            &self.vocab,
            &self.catalog_encoder,
            &self.store,
            self.config.encoder.max_turn_tokens,
        )?;
        Ok(())
    }

    pub fn encode_dialogue(&self, dialogue: &Dialogue) -> Result<EncodedDialogue> {
        dialogue.validate(&self.ontology)?;
        let max = self.config.encoder.max_turn_tokens;
        let tokens = dialogue
            .turns
            .iter()
            .map(|t| self.vocab.tokenize_turn(&t.system, &t.user, max))
            .collect();
        let ops = dialogue_state_ops(&self.ontology, dialogue, self.config.four_class)?;
        let mut gold_values = Vec::with_capacity(self.slot_names.len());
        let mut gold_ops = Vec::with_capacity(self.slot_names.len());
        for slot in &self.slot_names {
            gold_values.push(
                dialogue
                    .turns
                    .iter()
                    .map(|t| {
                        self.ontology
                            .value_index(slot, t.belief.get(slot))
                            .expect("validated belief")
                    })
                    .collect(),
            );
            gold_ops.push(ops.iter().map(|o| o[slot].index()).collect());
        }
        Ok(EncodedDialogue {
            tokens,
            gold_values,
            gold_ops,
        })
    }

    /// Builds the forward graph for one dialogue. Operation logits are only
    /// produced when `with_ops` is set.
    pub fn forward(&self, g: &mut Graph, dialogue: &EncodedDialogue, with_ops: bool) -> Result<DialogueForward> {
        let ps = &self.store;
        let t = dialogue.turns();
        let fusion = &self.config.fusion;
        let global_mask = build_mask(t, MaskKind::Global)?;
        let local_mask = build_mask(t, MaskKind::Local(fusion.history))?;

        let mut turns = Vec::with_capacity(t);
        for seq in &dialogue.tokens {
            turns.push(self.turn_encoder.encode(g, ps, seq)?);
        }
        let states: Vec<Var> = turns.iter().map(|e| e.token_states).collect();
        let tokens = if states.len() == 1 {
            states[0]
        } else {
            g.concat_rows(&states)?
        };
        let ids: Vec<Vec<usize>> = dialogue.tokens.iter().map(|s| s.ids.clone()).collect();
        let block = turn_block_mask(&ids, Vocabulary::PAD_ID);

        let mut slots = Vec::with_capacity(self.slot_names.len());
        for name in &self.slot_names {
            let h_s = g.constant(self.catalog.slot_embeddings[name].clone());
            let h_v = g.constant(self.catalog.value_embeddings[name].clone());
            let global = self.global.run(g, ps, h_s, tokens, &block, &global_mask)?;
            let local = self.local_branch().run(g, ps, h_s, tokens, &block, &local_mask)?;
            let context = self.gate.fuse(g, ps, global.contexts, local.contexts)?;
            let value_logits = value_logits(g, context.fused, h_v)?;
            let op_logits = if with_ops {
                Some(self.decoder.run(g, ps, context.local)?)
            } else {
                None
            };
            slots.push(SlotForward {
                context,
                value_logits,
                op_logits,
            });
        }
        Ok(DialogueForward { turns, slots })
    }

    /// `L_sv + L_sop` for one dialogue (`L_sv` alone in value-only mode).
    /// `index` tags the loss terms.
    pub fn loss(
        &self,
        g: &mut Graph,
        dialogue: &EncodedDialogue,
        mode: LossMode,
        index: usize,
    ) -> Result<DialogueLoss> {
        let fwd = self.forward(g, dialogue, mode == LossMode::Joint)?;
        let mut parts = Vec::new();
        let mut sv_terms = Vec::new();
        let mut sop_terms = Vec::new();
        for (s, out) in fwd.slots.iter().enumerate() {
            let name = &self.slot_names[s];
            parts.push(g.cross_entropy(out.value_logits, &dialogue.gold_values[s])?);
            sv_terms.extend(row_terms(
                g.value(out.value_logits),
                &dialogue.gold_values[s],
                index,
                name,
            ));
            if let Some(op) = out.op_logits {
                parts.push(g.cross_entropy(op, &dialogue.gold_ops[s])?);
                sop_terms.extend(row_terms(g.value(op), &dialogue.gold_ops[s], index, name));
            }
        }
        let mut total = parts[0];
        for &p in &parts[1..] {
            total = g.add(total, p)?;
        }
        Ok(DialogueLoss {
            total,
            sv_terms,
            sop_terms,
        })
    }

    /// Per-turn distributions of every slot, without gradient tracking.
    pub fn distributions(&self, dialogue: &EncodedDialogue) -> Result<Vec<TurnDistributions>> {
        let mut g = Graph::no_grad();
        let fwd = self.forward(&mut g, dialogue, true)?;
        let mut out: Vec<TurnDistributions> = (0..dialogue.turns()).map(|_| TurnDistributions::default()).collect();
        for (s, slot) in fwd.slots.iter().enumerate() {
            let name = &self.slot_names[s];
            let values = g.value(slot.value_logits);
            let ops = g.value(slot.op_logits.expect("ops requested"));
            for (t, turn) in out.iter_mut().enumerate() {
                turn.values
                    .insert(name.clone(), SlotValueDistribution::from_logits(values.row(t)));
                turn.ops.insert(name.clone(), OpDistribution::from_logits(ops.row(t)));
            }
        }
        Ok(out)
    }

    /// Predicted belief state after every turn.
    pub fn predict(&self, dialogue: &Dialogue, mode: DecodeMode) -> Result<Vec<BeliefState>> {
        let encoded = self.encode_dialogue(dialogue)?;
        let mut prev = BeliefState::new();
        let mut out = Vec::with_capacity(encoded.turns());
        for turn in self.distributions(&encoded)? {
            let state = decode_state(&self.ontology, &turn.values, &turn.ops, &prev, mode)?;
            prev = state.clone();
            out.push(state);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Default)]
pub struct TurnDistributions {
    pub values: BTreeMap<String, SlotValueDistribution>,
    pub ops: BTreeMap<String, OpDistribution>,
}

fn row_terms(logits: &Tensor, gold: &[usize], dialogue: usize, slot: &str) -> Vec<LossTerm> {
    gold.iter()
        .enumerate()
        .map(|(t, &y)| {
            let row = logits.row(t);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            LossTerm {
                dialogue,
                turn: t,
                slot: slot.to_string(),
                value: lse - row[y],
            }
        })
        .collect()
}
