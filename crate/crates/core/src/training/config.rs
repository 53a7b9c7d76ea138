use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRAINING_CONFIG_SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    SgdMomentum { momentum: f64 },
}

/// Where epoch-end validation metrics come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationSource {
    /// The held-out test split, as in the reference training runs.
    TestSplit,
    /// A seeded fraction of collected training images per class, together
    /// with any images generated from them.
    HoldoutFraction { fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CategoricalCrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub schema_version: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Zero is accepted and leaves every weight untouched.
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub loss: LossKind,
    pub shuffle_seed: u64,
    pub validation: ValidationSource,
    /// Pixel divisor applied before the network.
    pub rescale_factor: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            schema_version: TRAINING_CONFIG_SCHEMA_VERSION,
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            loss: LossKind::CategoricalCrossEntropy,
            shuffle_seed: 0,
            validation: ValidationSource::TestSplit,
            rescale_factor: 255.0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != TRAINING_CONFIG_SCHEMA_VERSION {
            return Err(Error::UnsupportedSchema {
                found: self.schema_version,
                supported: TRAINING_CONFIG_SCHEMA_VERSION,
            });
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if let OptimizerKind::SgdMomentum { momentum } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return Err(Error::InvalidArgument(format!(
                    "momentum must be in [0, 1), got {momentum}"
                )));
            }
        }
        if let ValidationSource::HoldoutFraction { fraction } = self.validation {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "holdout fraction must be in (0, 1), got {fraction}"
                )));
            }
        }
        if !(self.rescale_factor.is_finite() && self.rescale_factor > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rescale_factor must be positive, got {}",
                self.rescale_factor
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        let config: Self = serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrainingConfig::default();
        c.validate().unwrap();
        assert_eq!((c.epochs, c.batch_size), (20, 32));
        assert_eq!(c.learning_rate, 1e-3);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = TrainingConfig::from_json(r#"{"epochs": 3, "optimizer": {"kind": "sgd_momentum", "momentum": 0.9}}"#).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.optimizer, OptimizerKind::SgdMomentum { momentum: 0.9 });
    }

    #[test]
    fn rejects_bad_values() {
        for json in [
            r#"{"epochs": 0}"#,
            r#"{"batch_size": 0}"#,
            r#"{"learning_rate": -1.0}"#,
            r#"{"validation": {"kind": "holdout_fraction", "fraction": 1.5}}"#,
            r#"{"schema_version": 9}"#,
            r#"{"optimizer": {"kind": "lbfgs"}}"#,
        ] {
            assert!(TrainingConfig::from_json(json).is_err(), "{json}");
        }
    }
}
