//! Run configuration: one TOML file with `[model]`, `[train]` and
//! `decode` keys, layered as defaults < file < command-line flags.
//!
//! ```toml
//! decode = "direct"          # or "op_gated"
//!
//! [model]
//! four_class = false
//! positions = "sinusoidal"   # "learned", "disabled"
//!
//! [model.encoder]
//! d_model = 32
//! heads = 4
//! layers = 2
//! ff_dim = 64
//! max_turn_tokens = 64
//!
//! [model.fusion]
//! layers = 2                 # N, hierarchical transformer depth
//! heads = 4
//! ff_dim = 64
//! history = 1                # n, local window
//! tie_paths = false
//! max_turns = 32
//!
//! [train]
//! epochs = 30
//! batch_size = 4
//! learning_rate = 0.001
//! beta1 = 0.9
//! beta2 = 0.999
//! grad_clip = 5.0
//! seed = 0
//! loss_mode = "joint"        # or "sv_only"
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::heads::DecodeMode;
use crate::model::{LossMode, ModelConfig};
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub decode: DecodeMode,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Flag-level overrides; `None` leaves the file or default value alone.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub grad_clip: Option<f64>,
    pub seed: Option<u64>,
    pub loss_mode: Option<LossMode>,
    pub d_model: Option<usize>,
    pub layers: Option<usize>,
    pub history: Option<usize>,
    pub tie_paths: Option<bool>,
    pub four_class: Option<bool>,
    pub decode: Option<DecodeMode>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ModelError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ModelError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| ModelError::Config(format!("{}: {e}", path.display())))
    }

    /// Defaults, then `file` if given, then `overrides`; validated.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        let t = &mut self.train;
        set(&mut t.epochs, o.epochs);
        set(&mut t.batch_size, o.batch_size);
        set(&mut t.learning_rate, o.learning_rate);
        set(&mut t.grad_clip, o.grad_clip);
        set(&mut t.seed, o.seed);
        set(&mut t.loss_mode, o.loss_mode);
        let m = &mut self.model;
        set(&mut m.encoder.d_model, o.d_model);
        set(&mut m.fusion.layers, o.layers);
        set(&mut m.fusion.history, o.history);
        set(&mut m.fusion.tie_paths, o.tie_paths);
        set(&mut m.four_class, o.four_class);
        set(&mut self.decode, o.decode);
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn module_docs_example_parses_to_defaults() {
        let doc: String = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start())
            .collect::<Vec<_>>()
            .join("\n");
        assert_eq!(RunConfig::from_toml(&doc).unwrap(), RunConfig::default());
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[train]\nepochs = 7\nseed = 3\n[model.fusion]\nhistory = 2\n").unwrap();
        let o = Overrides {
            seed: Some(9),
            ..Overrides::default()
        };
        let cfg = RunConfig::resolve(Some(&path), &o).unwrap();
        assert_eq!((cfg.train.epochs, cfg.train.seed), (7, 9));
        assert_eq!(cfg.model.fusion.history, 2);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.train.loss_mode = LossMode::SvOnly;
        cfg.decode = DecodeMode::OpGated;
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::from_toml("[train]\nepoch = 3\n").is_err());
        let o = Overrides {
            learning_rate: Some(0.0),
            ..Overrides::default()
        };
        assert!(RunConfig::resolve(None, &o).is_err());
    }
}
