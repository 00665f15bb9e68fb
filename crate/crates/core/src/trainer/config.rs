use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::optim::AdamHyper;
use crate::error::{EicError, Result};
use crate::losses::{ErrorKind, LossConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Pretrain the interpolator.
    Interp,
    /// Train the extrapolator against a frozen interpolator.
    Extrap,
}

fn one() -> usize {
    1
}

/// Flat training configuration; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub phase: Phase,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub error_kind: ErrorKind,
    pub k: usize,
    pub train_data: PathBuf,
    #[serde(default)]
    pub val_data: Option<PathBuf>,
    #[serde(default)]
    pub interp_checkpoint: Option<PathBuf>,
    /// Save a checkpoint every this many epochs; 0 saves only the final one.
    pub checkpoint_every: usize,
    /// Detach the interpolator's motion estimate inside the cycle loss.
    #[serde(default)]
    pub eic_stop_gradient: bool,
    #[serde(default = "one")]
    pub window_stride: usize,
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EicError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            beta: self.beta,
            lambda: self.lambda,
            error_kind: self.error_kind,
        }
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    /// Whether training needs an interpolator checkpoint.
    pub fn needs_interpolator(&self) -> bool {
        self.phase == Phase::Extrap && self.lambda > 0.0
    }

    /// Field-level checks. The interpolator checkpoint requirement is not
    /// checked here because callers may supply it separately.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(EicError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if self.k < 2 {
            return fail(format!("k must be >= 2, got {}", self.k));
        }
        if self.window_stride == 0 {
            return fail("window_stride must be >= 1".into());
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return fail(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        self.loss().validate()
    }
}
