//! Run configuration shared by training, evaluation and experiments.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::ModelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub name: String,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            name: "adam".into(),
            learning_rate: 1e-3,
            batch_size: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSpec,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    /// Stop after this many epochs without a better validation Dice.
    /// Only used when a validation split exists.
    pub patience: Option<usize>,
    /// Enables on-the-fly augmentation during training.
    pub augment: bool,
    pub augmentation: AugmentConfig,
    /// Side of the square network input; samples are resized to it.
    pub input_size: usize,
    /// Foreground probability at or above which a pixel is predicted positive.
    pub threshold: f64,
    /// Recorded for provenance. Every code path here is single-threaded
    /// and reproducible, so the flag does not change results.
    pub deterministic: bool,
    /// Keep a checkpoint file per epoch instead of overwriting the latest.
    pub keep_all_checkpoints: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: ModelSpec::default(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            epochs: 30,
            patience: Some(5),
            augment: true,
            augmentation: AugmentConfig::default(),
            input_size: 224,
            threshold: 0.5,
            deterministic: true,
            keep_all_checkpoints: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.augmentation.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.optimizer.name.to_ascii_lowercase() != "adam" {
            return bad(format!("unknown optimizer {:?} (supported: adam)", self.optimizer.name));
        }
        let lr = self.optimizer.learning_rate;
        if !(lr >= 0.0 && lr.is_finite()) {
            return bad(format!("learning rate {lr} must be finite and non-negative"));
        }
        if self.optimizer.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.patience == Some(0) {
            return bad("patience must be at least 1 when set".into());
        }
        let div = self.model.size_divisor();
        if self.input_size == 0 || self.input_size % div != 0 {
            return bad(format!(
                "input_size {} must be a positive multiple of {div} for {} encoder stages",
                self.input_size,
                self.model.stage_channels.len()
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} must be in (0, 1)", self.threshold));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Json {
            context: format!("config {}", path.display()),
            source: e,
        })?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn input_size_must_divide() {
        let cfg = RunConfig {
            input_size: 100,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"epochs": 3, "optimizer": {"batch_size": 2}}"#).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.optimizer.batch_size, 2);
        assert_eq!(cfg.optimizer.learning_rate, 1e-3);
        assert_eq!(cfg.input_size, 224);
    }

    #[test]
    fn rejects_unknown_optimizer_and_zero_epochs() {
        let mut cfg = RunConfig::default();
        cfg.optimizer.name = "sgd".into();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
