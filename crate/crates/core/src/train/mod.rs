//! Maximum-likelihood and minimum-risk training.

mod log;
mod ml;
mod mrt;
mod optim;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use log::{LogRecord, TrainLog};
pub use ml::{
    dev_nll_per_token, nll_loss, train_ml, train_ml_with_evaluator, LrSchedule, MlOutcome,
    ScheduleEvent,
};
pub use mrt::{
    expected_sampled_error, mrt_loss, mrt_loss_with_samples, mrt_weights, sample_translation,
    train_mrt, MrtLoss, MrtOutcome,
};
pub use optim::{adam_update, clip_gradients, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};

/// Minimum-risk training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MrtConfig {
    pub num_samples: usize,
    pub alpha: f64,
    pub max_sample_len: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for MrtConfig {
    fn default() -> Self {
        Self {
            num_samples: 20,
            alpha: 0.005,
            max_sample_len: 50,
            epochs: 5,
            lr: 0.001,
        }
    }
}

/// Optimizer, schedule, batching and MRT settings.
///
/// Reference values are a 250k-sentence dev check interval and a 2M-sentence
/// patience; smaller values make the schedule usable on toy corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    /// Number of times the learning rate is halved before training stops.
    pub halvings: usize,
    pub word_budget: usize,
    pub clip_norm: f64,
    pub dev_check_interval: u64,
    pub patience: u64,
    /// Hard cap on passes over the training data.
    pub max_epochs: Option<usize>,
    pub mrt: MrtConfig,
    pub seed: u64,
    /// Record elapsed seconds in the log (makes logs non-reproducible).
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 0.001,
            halvings: 2,
            word_budget: 2048,
            clip_norm: 5.0,
            dev_check_interval: 250_000,
            patience: 2_000_000,
            max_epochs: None,
            mrt: MrtConfig::default(),
            seed: 1,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    /// `[lr, lr/2, lr/4, ...]`, one entry per stage.
    pub fn lr_schedule(&self) -> Vec<f64> {
        (0..=self.halvings)
            .map(|k| self.initial_lr / f64::powi(2.0, k as i32))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("initial_lr", self.initial_lr),
            ("clip_norm", self.clip_norm),
            ("mrt.alpha", self.mrt.alpha),
            ("mrt.lr", self.mrt.lr),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        let counts = [
            ("word_budget", self.word_budget as u64),
            ("dev_check_interval", self.dev_check_interval),
            ("patience", self.patience),
            ("mrt.max_sample_len", self.mrt.max_sample_len as u64),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.mrt.num_samples < 2 {
            return Err(Error::InvalidArgument(
                "mrt.num_samples must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_schedule(), vec![0.001, 0.0005, 0.00025]);
        assert_eq!(c.word_budget, 2048);
        assert_eq!(c.clip_norm, 5.0);
        assert_eq!(c.mrt.num_samples, 20);
        assert_eq!(c.mrt.alpha, 0.005);
        c.validate().unwrap();
    }

    #[test]
    fn validation() {
        let mut c = TrainConfig::default();
        c.mrt.num_samples = 1;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.mrt.alpha = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_partial_config() {
        let c: TrainConfig = toml::from_str("initial_lr = 0.01\n[mrt]\nalpha = 0.5\n").unwrap();
        assert_eq!(c.initial_lr, 0.01);
        assert_eq!(c.mrt.alpha, 0.5);
        assert_eq!(c.mrt.num_samples, 20);
        assert!(toml::from_str::<TrainConfig>("bogus = 1").is_err());
    }
}
