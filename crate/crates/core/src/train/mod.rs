//! Training protocol: Adam with step-decay learning rate, batch-size-one
//! epochs over a seeded case order, and best-validation checkpointing.

mod adam;
mod run;
mod split;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, Adam, AdamConfig, Moments};
pub use run::{
    load_model, mean_foreground_dice, save_model, train_loop, train_loop_with, write_run, EpochRecord, TrainOutcome,
    BEST_CHECKPOINT, LAST_CHECKPOINT, LOG_FILE,
};
pub use split::{split_dataset, split_sizes, Split};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            decay_factor: 0.1,
            decay_every: 50,
            epochs: 150,
            batch_size: 1,
            adam: AdamConfig::default(),
            seed: 0,
            split: [87.0 / 123.0, 18.0 / 123.0, 18.0 / 123.0],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return bad("train.lr0 must be positive");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad("train.decay_factor must be in (0, 1]");
        }
        if self.decay_every == 0 || self.epochs == 0 || self.batch_size == 0 {
            return bad("train.decay_every, train.epochs and train.batch_size must be at least 1");
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad("adam betas must be in [0, 1) and eps positive");
        }
        split::check_ratios(self.split)
    }
}

/// `lr0 · decay_factor^⌊epoch / decay_every⌋`, rounded to 15 significant
/// digits so decimal schedules land on their decimal values.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let k = (epoch / cfg.decay_every.max(1)) as i32;
    let raw = cfg.lr0 * cfg.decay_factor.powi(k);
    format!("{raw:.14e}").parse().unwrap_or(raw)
}
