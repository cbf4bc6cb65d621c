use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderError, ModelConfig, ModelParams};
use crate::numeric::AdamState;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// On-disk model state.
///
/// `params` maps each tensor name to `{"rows", "cols", "data"}` (row-major).
/// `optimizer` holds the ADAM moments so a resumed run continues exactly; it
/// is optional and absent from inference-only checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub params: ModelParams,
    pub rng_seed: u64,
    /// Number of completed training epochs.
    pub epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ModelParams, rng_seed: u64, epoch: usize) -> Self {
        Self { format_version: CHECKPOINT_FORMAT_VERSION, config, params, rng_seed, epoch, optimizer: None }
    }

    /// Checks the version, every tensor shape and the optimizer state.
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(EncoderError::Checkpoint(format!("unsupported format_version {}", self.format_version)));
        }
        self.params.check(&self.config)?;
        if let Some(opt) = &self.optimizer {
            let shapes = self.params.shapes();
            let ok = opt.m.len() == shapes.len()
                && opt.v.len() == shapes.len()
                && opt.m.iter().zip(&opt.v).zip(&shapes).all(|((m, v), s)| {
                    m.shape() == *s && v.shape() == *s && m.data().len() == s.0 * s.1 && v.data().len() == s.0 * s.1
                });
            if !ok {
                return Err(EncoderError::Checkpoint("optimizer state does not match parameters".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, EncoderError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, EncoderError> {
        let ckpt: Self = serde_json::from_str(text)?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EncoderError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EncoderError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
