use serde::{Deserialize, Serialize};

use crate::data::TrialSet;
use crate::error::{Error, Result};
use crate::model::{ArchConfig, Variant};

/// Optimizer, schedule and architecture for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub seed: u64,
    /// Overrides `arch.variant`.
    pub variant: Variant,
    /// Channel count, trial length and class count are taken from the data.
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_epochs: 1000,
            patience: 100,
            batch_size: 64,
            val_fraction: 0.2,
            seed: 0,
            variant: Variant::Full,
            arch: ArchConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            p.push(format!("lr {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            p.push(format!("adam betas ({}, {}) must lie in [0, 1)", self.beta1, self.beta2));
        }
        if !(self.eps > 0.0) {
            p.push(format!("eps {} must be positive", self.eps));
        }
        if self.max_epochs == 0 {
            p.push("max_epochs must be positive".into());
        }
        if self.patience == 0 {
            p.push("patience must be at least 1".into());
        }
        if self.patience > self.max_epochs {
            p.push(format!("patience {} exceeds max_epochs {}", self.patience, self.max_epochs));
        }
        if self.batch_size < 2 {
            p.push(format!("batch_size {} must be at least 2 (batch norm)", self.batch_size));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            p.push(format!("val_fraction {} outside (0, 1)", self.val_fraction));
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }

    /// Architecture sized for `data`.
    pub fn arch_for(&self, data: &TrialSet) -> ArchConfig {
        ArchConfig {
            n_channels: data.n_channels,
            n_timepoints: data.n_samples,
            n_classes: data.n_classes,
            variant: self.variant,
            ..self.arch.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let c = TrainConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!((c.lr, c.max_epochs, c.patience, c.batch_size), (1e-3, 1000, 100, 64));
        let bad = TrainConfig { patience: 0, val_fraction: 1.0, ..TrainConfig::default() };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("patience") && msg.contains("val_fraction"), "{msg}");
        let bad = TrainConfig { patience: 20, max_epochs: 10, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn serde_round_trip() {
        let c = TrainConfig { variant: Variant::Concat, seed: 7, ..TrainConfig::default() };
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&s).unwrap(), c);
        let partial: TrainConfig = serde_json::from_str(r#"{"lr": 0.01, "arch": {"state_dim": 16}}"#).unwrap();
        assert_eq!((partial.lr, partial.arch.state_dim, partial.arch.gru_hidden), (0.01, 16, 40));
        assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 1}"#).is_err());
    }
}
