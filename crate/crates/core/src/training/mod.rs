//! Weighted cross-entropy, AdamW, the warmup + cosine schedule and the
//! early-stopping fit loop.

mod fit;
mod loss;
mod optim;
mod presets;
mod schedule;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterConfig, AdapterError};
use crate::dataio::DataError;

pub use fit::{fit, fit_with_schedule, EpochRecord, FitOutcome, TrainState, Trainer};
pub use loss::{cross_entropy, inverse_frequency_weights, weighted_cross_entropy, ClassWeightVector, LOG_CLAMP};
pub use optim::{adamw_step, AdamConfig, AdamState};
pub use presets::{load_preset, Preset, PRESETS};
pub use schedule::{lr_at, lr_at_epoch};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training split is empty")]
    EmptyTrainSet,
    #[error("class {0} has no training samples")]
    ZeroCount(usize),
    #[error("unknown attribute preset {0:?}")]
    UnknownAttribute(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
}

/// How per-class loss weights are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Uniform,
    Inverse,
}

impl fmt::Display for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Weighting::Uniform => "uniform",
            Weighting::Inverse => "inverse",
        })
    }
}

impl FromStr for Weighting {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Weighting::Uniform),
            "inverse" => Ok(Weighting::Inverse),
            _ => Err(TrainError::InvalidConfig(format!("unknown weighting {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_start_lr: f64,
    pub warmup_epochs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub weighting: Weighting,
    pub seed: u64,
    pub alpha: f64,
    pub heads: usize,
    /// `None` means D/4.
    pub bottleneck: Option<usize>,
    pub dropout_p: f64,
    pub ln_eps: f64,
    pub use_bias: bool,
    /// L2-normalize the feature and classifier rows before the dot product.
    pub cosine: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 5e-4,
            warmup_start_lr: 1e-5,
            warmup_epochs: 5,
            max_epochs: 100,
            patience: 10,
            batch_size: 256,
            adam: AdamConfig::default(),
            weighting: Weighting::Uniform,
            seed: 42,
            alpha: 0.8,
            heads: 4,
            bottleneck: None,
            dropout_p: 0.1,
            ln_eps: 1e-5,
            use_bias: false,
            cosine: true,
        }
    }
}

impl TrainConfig {
    pub fn with_preset(mut self, preset: &Preset) -> Self {
        self.weighting = preset.weighting;
        self.alpha = preset.alpha;
        self.heads = preset.heads;
        self
    }

    pub fn adapter_config(&self, dim: usize) -> AdapterConfig {
        AdapterConfig {
            dim,
            bottleneck: self.bottleneck.unwrap_or((dim / 4).max(1)),
            heads: self.heads,
            alpha: self.alpha,
            dropout_p: self.dropout_p,
            ln_eps: self.ln_eps,
            use_bias: self.use_bias,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.warmup_epochs >= self.max_epochs {
            return bad("warmup must be shorter than the run");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.warmup_start_lr > 0.0 && self.warmup_start_lr <= self.peak_lr) {
            return bad("need 0 < warmup start lr <= peak lr");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 || a.weight_decay < 0.0 {
            return bad("AdamW settings out of range");
        }
        Ok(())
    }
}
