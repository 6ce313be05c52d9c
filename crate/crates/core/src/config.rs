//! Distillation hyperparameters and their document form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ActivationSource;

/// How the relation loss compares teacher and student.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelationMode {
    /// MSE over the 3×3 Gram matrices G = A·Aᵀ.
    Gram,
    /// MSE directly over the stacked 3×D activation matrices.
    RawActivations,
}

/// Which optimizer drives parameter updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn default_adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// All knobs of a distillation run. Unknown fields in the document form are
/// rejected to catch misspelled hyperparameter names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Weight of the text-only cross-entropy term.
    pub alpha: f64,
    /// Weight of the image-only cross-entropy term.
    pub beta: f64,
    /// Weight of the joint cross-entropy term.
    pub gamma: f64,
    /// Softmax temperature for the KD term.
    pub temperature: f64,
    pub lambda_kd: f64,
    pub lambda_mr: f64,
    pub relation_mode: RelationMode,
    pub relation_source: ActivationSource,
    /// L2-normalize rows of A before forming G.
    pub normalize_rows: bool,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
            gamma: 1.0 / 3.0,
            temperature: 2.0,
            lambda_kd: 1.0,
            lambda_mr: 1.0,
            relation_mode: RelationMode::Gram,
            relation_source: ActivationSource::Hidden,
            normalize_rows: true,
            optimizer: OptimizerKind::default_adam(),
            learning_rate: 1e-3,
            epochs: 45,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Param(format!("temperature must be positive, got {}", self.temperature)));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda_kd", self.lambda_kd),
            ("lambda_mr", self.lambda_mr),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Param(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Param(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Param("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Param("batch_size must be at least 1".into()));
        }
        if let OptimizerKind::Adam { beta1, beta2, epsilon } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
                return Err(Error::Param(format!(
                    "adam parameters out of range: beta1 {beta1}, beta2 {beta2}, epsilon {epsilon}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: DistillConfig =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("config document: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
