//! Training loop, evaluation, ablation runner and gradient checker.

mod ablation;
mod gradcheck;
mod metrics;
mod optim;

pub use ablation::{run_ablation, AblationRow, AblationSummary, AblationTable, Variant};
pub use gradcheck::{grad_check, tiny_config, tiny_corpus, GradCheckReport, TensorCheck};
pub use metrics::{compute_metrics, f1, MetricsReport, SlotMetrics};
pub use optim::{clip_grad_norm, grad_norm, Adam};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusFile, Dialogue};
use crate::error::{ModelError, Result};
use crate::heads::{joint_loss, DecodeMode};
use crate::model::{DstModel, LossMode};
use crate::tensor::Graph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Dialogues per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub loss_mode: LossMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            grad_clip: 5.0,
            seed: 0,
            loss_mode: LossMode::Joint,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return bad("grad_clip must be positive");
        }
        Ok(())
    }
}

/// Mean per-dialogue losses over one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub l_sv: f64,
    pub l_sop: f64,
    pub l_joint: f64,
}

/// Trains `model` in place and returns the loss curve. `on_epoch` sees each
/// epoch's losses as soon as they are known.
pub fn train(
    model: &mut DstModel,
    dialogues: &[Dialogue],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<Vec<EpochLoss>> {
    cfg.validate()?;
    if dialogues.is_empty() {
        return Err(ModelError::Config("training corpus is empty".into()));
    }
    let encoded = dialogues
        .iter()
        .map(|d| model.encode_dialogue(d))
        .collect::<Result<Vec<_>>>()?;
    let mut adam = Adam::new(&model.store, cfg.learning_rate, cfg.beta1, cfg.beta2);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let (mut sv, mut sop) = (0.0, 0.0);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            model.store.zero_grad();
            for &i in chunk {
                let mut g = Graph::new();
                let loss = model.loss(&mut g, &encoded[i], cfg.loss_mode, i)?;
                let report = joint_loss(&loss.sv_terms, &loss.sop_terms)?;
                if !report.l_joint.is_finite() || !g.value(loss.total).item().is_finite() {
                    return Err(ModelError::NonFinite { epoch, batch });
                }
                sv += report.l_sv;
                sop += report.l_sop;
                g.backward(loss.total)?;
                g.flush_param_grads(&mut model.store);
            }
            if !grad_norm(&model.store).is_finite() {
                return Err(ModelError::NonFinite { epoch, batch });
            }
            clip_grad_norm(&mut model.store, cfg.grad_clip);
            adam.step(&mut model.store);
        }
        let n = encoded.len() as f64;
        let (l_sv, l_sop) = (sv / n, sop / n);
        let point = EpochLoss {
            epoch,
            l_sv,
            l_sop,
            l_joint: l_sv + l_sop,
        };
        on_epoch(&point);
        curve.push(point);
    }
    model.store.zero_grad();
    Ok(curve)
}

/// Predicts every dialogue and scores the predictions against gold.
pub fn evaluate_dialogues(model: &DstModel, dialogues: &[Dialogue], mode: DecodeMode) -> Result<MetricsReport> {
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for d in dialogues {
        pred.extend(model.predict(d, mode)?);
        gold.extend(d.beliefs().cloned());
    }
    Ok(compute_metrics(model.slot_names(), &gold, &pred))
}

/// As [`evaluate_dialogues`], after checking that the corpus was built on
/// the model's ontology.
pub fn evaluate(model: &DstModel, corpus: &CorpusFile, mode: DecodeMode) -> Result<MetricsReport> {
    let expected = model.ontology.hash();
    let found = corpus.ontology.hash();
    if expected != found {
        return Err(ModelError::OntologyMismatch { expected, found });
    }
    evaluate_dialogues(model, &corpus.dialogues, mode)
}

/// Epochs after `after` whose mean joint loss rose above the previous one.
pub fn monotonicity_violations(curve: &[EpochLoss], after: usize) -> usize {
    curve
        .windows(2)
        .filter(|w| w[1].epoch > after && w[1].l_joint > w[0].l_joint)
        .count()
}
