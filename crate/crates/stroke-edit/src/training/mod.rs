//! Semi-supervised hybrid training: mixed synthetic/real batches,
//! alternating discriminator/generator updates, checkpointing, and the
//! ablation switches.

mod batch;
mod checkpoint;
mod pretrain;
mod state;
mod step;

pub use batch::{build_hybrid_batch, Batch};
pub use checkpoint::{
    load_checkpoint, load_recognizer_checkpoint, read_header, save_checkpoint,
    save_recognizer_checkpoint, CheckpointHeader, CHECKPOINT_FORMAT_VERSION,
};
pub use pretrain::{pretrain_recognizer, recognizer_word_accuracy, RecPretrainOutcome};
pub use state::TrainState;
pub use step::{run_training, train_step, RunArtifacts, StepReport};

use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::networks::{ModelConfig, SlmPlacement};

/// Countermeasure and component switches; every published ablation row is a
/// combination of these. Pure configuration: no flag changes the checkpoint
/// format or dataset contract.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    pub use_slm: bool,
    pub use_recognizer: bool,
    pub use_background_filter: bool,
    pub use_style_augment: bool,
    pub block_gradient: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            use_slm: true,
            use_recognizer: true,
            use_background_filter: true,
            use_style_augment: true,
            block_gradient: true,
        }
    }
}

impl AblationFlags {
    /// Parses `name=on|off` pairs, e.g. `use_slm=off,use_style_augment=off`.
    pub fn apply_overrides(&mut self, spec: &str) -> Result<()> {
        for part in spec.split(',').filter(|s| !s.is_empty()) {
            let (name, value) = part.split_once('=').ok_or_else(|| {
                Error::Config(format!("ablation override {part:?} is not name=on|off"))
            })?;
            let value = match value.trim() {
                "on" | "true" | "1" => true,
                "off" | "false" | "0" => false,
                other => {
                    return Err(Error::Config(format!(
                        "ablation value {other:?} is not on/off"
                    )))
                }
            };
            match name.trim() {
                "use_slm" => self.use_slm = value,
                "use_recognizer" => self.use_recognizer = value,
                "use_background_filter" => self.use_background_filter = value,
                "use_style_augment" => self.use_style_augment = value,
                "block_gradient" => self.block_gradient = value,
                other => {
                    return Err(Error::Config(format!("unknown ablation flag {other:?}")))
                }
            }
        }
        Ok(())
    }
}

/// GAN objective selector. Only the non-saturating form is implemented;
/// the enum exists so configs can name it explicitly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanObjective {
    #[default]
    NonSaturating,
}

/// Recognizer pre-training settings used when no checkpoint is supplied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecPretrainConfig {
    /// Load a pre-trained recognizer instead of training one.
    pub ckpt: Option<PathBuf>,
    pub iters: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Held-out fraction of the corpus used for the accuracy gate.
    pub holdout_fraction: f64,
}

impl Default for RecPretrainConfig {
    fn default() -> Self {
        RecPretrainConfig {
            ckpt: None,
            iters: 3000,
            batch_size: 32,
            lr: 1e-3,
            holdout_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub total_iters: u64,
    pub batch_size: usize,
    pub real_per_batch: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub seed: u64,
    pub ablation: AblationFlags,
    pub slm_placement: SlmPlacement,
    pub gan_objective: GanObjective,
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub rec: RecPretrainConfig,
    pub log_interval: u64,
    pub checkpoint_interval: u64,
    pub grid_interval: u64,
    /// Validate dataset invariants on every sample load.
    pub strict_load: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_iters: 20_000,
            batch_size: 16,
            real_per_batch: 2,
            lr: 5e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            seed: 0,
            ablation: AblationFlags::default(),
            slm_placement: SlmPlacement::default(),
            gan_objective: GanObjective::default(),
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            rec: RecPretrainConfig::default(),
            log_interval: 100,
            checkpoint_interval: 2000,
            grid_interval: 1000,
            strict_load: false,
        }
    }
}

impl TrainConfig {
    /// The full-scale preset: 300k iterations on 256x64 inputs with the
    /// published batch mixture. Not desk-runnable; provided for users with
    /// the compute.
    pub fn paper_scale() -> Self {
        TrainConfig {
            total_iters: 300_000,
            batch_size: 16,
            real_per_batch: 2,
            lr: 5e-5,
            model: ModelConfig {
                base_channels: 32,
                image_w: 256,
                image_h: 64,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.real_per_batch > self.batch_size {
            return Err(Error::Config(format!(
                "real_per_batch {} exceeds batch_size {}",
                self.real_per_batch, self.batch_size
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        self.model.validate()
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let config: TrainConfig = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_overrides_parse() {
        let mut f = AblationFlags::default();
        f.apply_overrides("use_slm=off,block_gradient=off").unwrap();
        assert!(!f.use_slm && !f.block_gradient && f.use_recognizer);
        assert!(f.apply_overrides("bogus=off").is_err());
        assert!(f.apply_overrides("use_slm=maybe").is_err());
    }

    #[test]
    fn config_validation_bounds() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.real_per_batch = 17;
        assert!(c.validate().is_err());
        c.real_per_batch = 0;
        c.lr = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let json = r#"{"total_iters": 5, "bogus_field": 1}"#;
        let parsed: std::result::Result<TrainConfig, _> = serde_json::from_str(json);
        assert!(parsed.is_err());
    }

    #[test]
    fn paper_scale_preset_echoes_published_values() {
        let c = TrainConfig::paper_scale();
        assert_eq!(c.total_iters, 300_000);
        assert_eq!(c.batch_size, 16);
        assert_eq!(c.real_per_batch, 2);
        assert_eq!(c.lr, 5e-5);
        assert_eq!((c.adam_beta1, c.adam_beta2), (0.9, 0.999));
        assert_eq!((c.model.image_w, c.model.image_h), (256, 64));
    }
}
