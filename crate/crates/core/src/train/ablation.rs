use std::fmt;

use serde::{Deserialize, Serialize};

use super::{evaluate_dialogues, train, TrainConfig};
use crate::corpus::{Dialogue, Ontology, Vocabulary};
use crate::error::{ModelError, Result};
use crate::heads::DecodeMode;
use crate::model::{DstModel, LossMode, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "JOINT")]
    Joint,
    #[serde(rename = "SV_ONLY")]
    SvOnly,
}

impl Variant {
    pub fn loss_mode(self) -> LossMode {
        match self {
            Variant::Joint => LossMode::Joint,
            Variant::SvOnly => LossMode::SvOnly,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Joint => "JOINT",
            Variant::SvOnly => "SV_ONLY",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub joint_accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationSummary {
    pub variant: Variant,
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub spread: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn summary(&self, variant: Variant) -> AblationSummary {
        let xs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| r.joint_accuracy)
            .collect();
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let spread = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        AblationSummary { variant, mean, spread }
    }

    /// Per seed, `JOINT - SV_ONLY` joint accuracy.
    pub fn deltas(&self) -> Vec<(u64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.variant == Variant::Joint)
            .filter_map(|j| {
                self.rows
                    .iter()
                    .find(|r| r.variant == Variant::SvOnly && r.seed == j.seed)
                    .map(|s| (j.seed, j.joint_accuracy - s.joint_accuracy))
            })
            .collect()
    }

    /// `variant,seed,joint_accuracy` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
    }

    /// Human-readable two-row comparison with the delta in parentheses.
    pub fn render(&self) -> String {
        let j = self.summary(Variant::Joint);
        let s = self.summary(Variant::SvOnly);
        format!(
            "{:<8} {:>7.2} ± {:.2}\n{:<8} {:>7.2} ± {:.2} ({:+.2})\n",
            "JOINT",
            100.0 * j.mean,
            100.0 * j.spread,
            "SV_ONLY",
            100.0 * s.mean,
            100.0 * s.spread,
            100.0 * (s.mean - j.mean)
        )
    }
}

/// Trains both variants for every seed on the same split and scores each on
/// `held_out`.
pub fn run_ablation(
    ontology: &Ontology,
    train_set: &[Dialogue],
    held_out: &[Dialogue],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
    mut progress: impl FnMut(&AblationRow),
) -> Result<AblationTable> {
    if seeds.len() < 2 {
        return Err(ModelError::Config("ablation needs at least two seeds".into()));
    }
    let vocab = Vocabulary::build(ontology, train_set);
    let mut rows = Vec::with_capacity(2 * seeds.len());
    for &seed in seeds {
        for variant in [Variant::Joint, Variant::SvOnly] {
            let mut model = DstModel::new(model_cfg.clone(), ontology.clone(), vocab.clone(), seed)?;
            let cfg = TrainConfig {
                seed,
                loss_mode: variant.loss_mode(),
                ..train_cfg.clone()
            };
            train(&mut model, train_set, &cfg, |_| {})?;
            let report = evaluate_dialogues(&model, held_out, DecodeMode::Direct)?;
            let row = AblationRow {
                variant,
                seed,
                joint_accuracy: report.joint_accuracy,
            };
            progress(&row);
            rows.push(row);
        }
    }
    Ok(AblationTable { rows })
}
