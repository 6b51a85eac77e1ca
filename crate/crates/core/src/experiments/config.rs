use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mvre::{InitMode, ScoreMode, DEFAULT_EPSILON};
use crate::nn::AdamWConfig;
use crate::vocab::{EntityOrder, TemplateOptions};

/// Optimization and multi-view hyperparameters for one run.
///
/// `alpha`/`beta` left unset resolve by init mode: 1.2/0.7 when dynamic
/// probing is involved, 2/0.1 otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub m: usize,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_len: usize,
    pub seed: u64,
    pub init_mode: InitMode,
    pub best_dev_selection: bool,
    pub score_mode: ScoreMode,
    pub order: EntityOrder,
    pub markers: bool,
    pub epsilon: f64,
    /// Count NA decisions in micro-F1 like any other relation.
    pub na_inclusive_f1: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            m: 3,
            alpha: None,
            beta: None,
            lr: 3e-5,
            weight_decay: 0.01,
            epochs: 40,
            batch_size: 8,
            max_len: 128,
            seed: 0,
            init_mode: InitMode::Combined,
            best_dev_selection: false,
            score_mode: ScoreMode::Mixture,
            order: EntityOrder::SubObj,
            markers: true,
            epsilon: DEFAULT_EPSILON,
            na_inclusive_f1: false,
        }
    }
}

impl TrainConfig {
    /// Full-data defaults: smaller learning rate, 16 epochs.
    pub fn standard() -> Self {
        TrainConfig {
            lr: 5e-6,
            epochs: 16,
            ..Self::default()
        }
    }

    fn uses_probe(&self) -> bool {
        matches!(self.init_mode, InitMode::Dynamic | InitMode::Combined)
    }

    pub fn resolved_alpha(&self) -> f64 {
        self.alpha
            .unwrap_or(if self.uses_probe() { 1.2 } else { 2.0 })
    }

    pub fn resolved_beta(&self) -> f64 {
        self.beta
            .unwrap_or(if self.uses_probe() { 0.7 } else { 0.1 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::validation("m", "must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::validation("lr", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be positive"));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::validation("epsilon", "must be positive"));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if v.is_some_and(|x| !x.is_finite()) {
                return Err(Error::validation(name, "must be finite"));
            }
        }
        Ok(())
    }

    pub fn template(&self) -> TemplateOptions {
        TemplateOptions {
            m: self.m,
            max_len: self.max_len,
            order: self.order,
            markers: self.markers,
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}
