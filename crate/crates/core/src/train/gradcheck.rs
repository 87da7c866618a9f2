use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{BeliefState, CorpusFile, Dialogue, Ontology, Turn, Vocabulary, DONTCARE};
use crate::encoders::EncoderConfig;
use crate::error::Result;
use crate::fusion::FusionConfig;
use crate::model::{DstModel, LossMode, ModelConfig};
use crate::tensor::{BackwardFault, Graph};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error. Gradients smaller than the
/// step (key biases, whose exact gradient is 0, for instance) are compared
/// on an absolute scale, since central differences of an O(1) loss carry
/// roundoff noise near 1e-10.
pub const REL_FLOOR: f64 = FD_STEP;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub numel: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn failures(&self) -> Vec<&TensorCheck> {
        self.tensors
            .iter()
            .filter(|t| t.max_rel_error.is_nan() || t.max_rel_error >= self.tolerance)
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

/// `d = 8`, two heads, one layer everywhere.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            d_model: 8,
            heads: 2,
            layers: 1,
            ff_dim: 16,
            max_turn_tokens: 16,
        },
        fusion: FusionConfig {
            layers: 1,
            heads: 2,
            ff_dim: 16,
            history: 1,
            tie_paths: false,
            max_turns: 4,
        },
        ..ModelConfig::default()
    }
}

/// Two-slot ontology and one random three-turn dialogue over a vocabulary
/// of fewer than 20 words.
pub fn tiny_corpus(seed: u64) -> CorpusFile {
    let ontology = Ontology::from_pairs(&[("area", &["north", "south"][..]), ("food", &["thai", "greek"][..])])
        .expect("static ontology");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut belief = BeliefState::new();
    let mut turns = Vec::new();
    for t in 0..3 {
        let mut said = Vec::new();
        for slot in ["area", "food"] {
            if rng.gen_bool(0.6) || (t == 0 && said.is_empty() && slot == "food") {
                let mut options = ontology.real_values(slot);
                options.push(DONTCARE);
                let v = *options.choose(&mut rng).expect("non-empty");
                belief.set(slot, v);
                said.push(format!("want {v} {slot}"));
            }
        }
        let user = if said.is_empty() {
            "ok".to_string()
        } else {
            said.join(" please ")
        };
        let system = if t == 0 { "" } else { "ok" };
        turns.push(Turn::new(system, user, belief.clone()));
    }
    CorpusFile::new(ontology, vec![Dialogue::new(format!("tiny-{seed}"), turns)])
}

/// Compares analytic gradients of the joint loss with central differences
/// for every trainable tensor of a freshly initialized model. `fault`
/// corrupts one backward rule to exercise the checker itself.
pub fn grad_check(
    config: &ModelConfig,
    corpus: &CorpusFile,
    seed: u64,
    tolerance: f64,
    fault: Option<BackwardFault>,
) -> Result<GradCheckReport> {
    let vocab = Vocabulary::build(&corpus.ontology, &corpus.dialogues);
    let mut model = DstModel::new(config.clone(), corpus.ontology.clone(), vocab, seed)?;
    let encoded = corpus
        .dialogues
        .iter()
        .map(|d| model.encode_dialogue(d))
        .collect::<Result<Vec<_>>>()?;

    model.store.zero_grad();
    for (i, d) in encoded.iter().enumerate() {
        let mut g = match fault {
            Some(f) => Graph::new().with_fault(f),
            None => Graph::new(),
        };
        let loss = model.loss(&mut g, d, LossMode::Joint, i)?;
        g.backward(loss.total)?;
        g.flush_param_grads(&mut model.store);
    }

    let total_loss = |m: &DstModel| -> Result<f64> {
        let mut sum = 0.0;
        for (i, d) in encoded.iter().enumerate() {
            let mut g = Graph::no_grad();
            let loss = m.loss(&mut g, d, LossMode::Joint, i)?;
            sum += g.value(loss.total).item();
        }
        Ok(sum)
    };

    let mut tensors = Vec::new();
    for id in model.store.trainable_ids() {
        let analytic = model.store.get(id).grad.clone();
        let mut check = TensorCheck {
            name: model.store.get(id).name.clone(),
            numel: analytic.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        };
        for (i, &a) in analytic.iter().enumerate() {
            let orig = model.store.get(id).value.data()[i];
            model.store.get_mut(id).value.data_mut()[i] = orig + FD_STEP;
            let plus = total_loss(&model)?;
            model.store.get_mut(id).value.data_mut()[i] = orig - FD_STEP;
            let minus = total_loss(&model)?;
            model.store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            check.max_abs_error = check.max_abs_error.max(abs);
            check.max_rel_error = check.max_rel_error.max(rel);
        }
        tensors.push(check);
    }
    Ok(GradCheckReport {
        seed,
        tolerance,
        tensors,
    })
}
