//! The `--config` file: one JSON document shared by every subcommand.
//!
//! ```json
//! {
//!   "train":   { "batch_size": 4, "learning_rate": 3e-4, "epochs": 200, "seed": 0,
//!                "checkpoint_every": 50, "loss": { "kind": "regression", "temperature": 0.1 } },
//!   "augment": { "sigma_angle": 10.0, "sigma_translation": 0.1, "sigma_latent": 0.1,
//!                "geometric_probability": 0.3, "temporal_min_fraction": 0.5,
//!                "enabled": { "temporal": true, "translation": true, "flip": true,
//!                             "angle": true, "latent": true } },
//!   "model":   null,
//!   "eval":    { "seed": 0, "k": 1, "label_fractions": [0.1, 0.5, 1.0], "ap_ks": [5, 10, 15] }
//! }
//! ```
//!
//! Every section and field is optional; missing ones take their defaults.
//! `model: null` derives the model shape from the data.

use std::path::Path;

use casa_core::augment::AugmentConfig;
use casa_core::dataio::parse_json;
use casa_core::encoder::ModelConfig;
use casa_core::evalalign::EvalConfig;
use casa_core::training::{LossConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub loss: LossConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            seed: t.seed,
            checkpoint_every: t.checkpoint_every,
            loss: t.loss,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub train: TrainSection,
    pub augment: AugmentConfig,
    pub model: Option<ModelConfig>,
    pub eval: EvalConfig,
}

impl CliConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, casa_core::dataio::DataError> {
        parse_json(text, origin)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        Ok(Self::from_json(&text, &path.display().to_string())?)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            seed: t.seed,
            augment: self.augment,
            model: self.model,
            loss: t.loss,
            checkpoint_every: t.checkpoint_every,
        }
    }
}
