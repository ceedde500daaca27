use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EarlyStopMode {
    /// Stop epochs from the exponential schedule.
    Formula,
    /// Stop a unit once its validation accuracy falls too far below its best.
    Validation,
    Off,
}

impl FromStr for EarlyStopMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "formula" => Ok(EarlyStopMode::Formula),
            "validation" => Ok(EarlyStopMode::Validation),
            "off" => Ok(EarlyStopMode::Off),
            other => Err(Error::config(
                "early_stop",
                format!("expected formula|validation|off, got `{other}`"),
            )),
        }
    }
}

impl fmt::Display for EarlyStopMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EarlyStopMode::Formula => "formula",
            EarlyStopMode::Validation => "validation",
            EarlyStopMode::Off => "off",
        })
    }
}

/// Every training hyperparameter. Accuracy thresholds are in accuracy
/// points (percent).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Number of unrolled answering units.
    pub k: usize,
    pub lr_encoder: f64,
    pub lr_answering: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub lr_decay: f64,
    /// Global gradient-norm bound.
    pub clip_norm: f64,
    pub dropout_rate: f64,
    /// Scale of the annealed gradient noise; 0 disables it.
    pub noise_eta: f64,
    pub t_min: usize,
    /// Maximum number of epochs.
    pub t_max: usize,
    pub lambda: f64,
    /// Validation drop (points) that deactivates a unit.
    pub val_drop_threshold: f64,
    /// Epochs without a 0.1-point gain in unit-1 validation accuracy before
    /// training ends.
    pub saturation_patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub early_stop: EarlyStopMode,
    /// Training examples (a fixed prefix of the split) measured after each
    /// epoch for the train rows of the metrics table.
    pub train_eval_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 4,
            lr_encoder: 3e-3,
            lr_answering: 3e-4,
            lr_decay: 0.9,
            clip_norm: 0.1,
            dropout_rate: 0.5,
            noise_eta: 1e-6,
            t_min: 5,
            t_max: 30,
            lambda: 1.0,
            val_drop_threshold: 0.5,
            saturation_patience: 5,
            batch_size: 32,
            seed: 1,
            early_stop: EarlyStopMode::Validation,
            train_eval_size: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::config("k", "must be at least 1"));
        }
        if self.t_min < 1 {
            return Err(Error::config("t_min", "must be at least 1"));
        }
        if self.t_min > self.t_max {
            return Err(Error::config(
                "t_min/t_max",
                format!("t_min ({}) exceeds t_max ({})", self.t_min, self.t_max),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate", "must lie in [0, 1)"));
        }
        if self.early_stop == EarlyStopMode::Formula {
            if !(self.lambda > 0.0) {
                return Err(Error::config("lambda", "must be positive in formula mode"));
            }
            if self.k < 2 {
                return Err(Error::config("k", "formula early stopping needs k >= 2"));
            }
        }
        for (key, v) in [
            ("lr_encoder", self.lr_encoder),
            ("lr_answering", self.lr_answering),
            ("lr_decay", self.lr_decay),
            ("clip_norm", self.clip_norm),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !(self.noise_eta >= 0.0) {
            return Err(Error::config("noise_eta", "must be non-negative"));
        }
        if !(self.val_drop_threshold >= 0.0) {
            return Err(Error::config("val_drop_threshold", "must be non-negative"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.saturation_patience < 1 {
            return Err(Error::config("saturation_patience", "must be at least 1"));
        }
        Ok(())
    }
}
