use serde::{Deserialize, Serialize};

use super::TrainingError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchedulerConfig {
    /// `peak · min(s/w, √(w/s))` for optimizer step `s ≥ 1`.
    Noam {
        peak: f64,
        warmup: u64,
    },
    /// Multiply by `factor` once validation loss has failed to improve for
    /// more than `patience` consecutive validations.
    Plateau {
        start: f64,
        factor: f64,
        patience: usize,
    },
    /// `start · (1 − e/E)` after `e` completed epochs, floored at 0.
    Linear {
        start: f64,
        epochs: usize,
    },
    Constant {
        lr: f64,
    },
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let ok = match *self {
            SchedulerConfig::Noam { peak, warmup } => peak >= 0.0 && warmup >= 1,
            SchedulerConfig::Plateau { start, factor, .. } => start >= 0.0 && (0.0..=1.0).contains(&factor),
            SchedulerConfig::Linear { start, epochs } => start >= 0.0 && epochs >= 1,
            SchedulerConfig::Constant { lr } => lr >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(TrainingError::InvalidConfig(format!("invalid scheduler {self:?}")))
        }
    }
}

pub fn noam_lr(peak: f64, warmup: u64, step: u64) -> f64 {
    let (s, w) = (step.max(1) as f64, warmup as f64);
    peak * (s / w).min((w / s).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scheduler {
    config: SchedulerConfig,
    epoch_lr: f64,
    best: Option<f64>,
    bad_epochs: usize,
    epochs_done: usize,
}

impl Scheduler {
    pub fn new(config: SchedulerConfig) -> Result<Self, TrainingError> {
        config.validate()?;
        let epoch_lr = match config {
            SchedulerConfig::Noam { .. } => 0.0,
            SchedulerConfig::Plateau { start, .. } => start,
            SchedulerConfig::Linear { start, .. } => start,
            SchedulerConfig::Constant { lr } => lr,
        };
        Ok(Self {
            config,
            epoch_lr,
            best: None,
            bad_epochs: 0,
            epochs_done: 0,
        })
    }

    /// Learning rate for optimizer step `step` (1-based).
    pub fn lr(&self, step: u64) -> f64 {
        match self.config {
            SchedulerConfig::Noam { peak, warmup } => noam_lr(peak, warmup, step),
            _ => self.epoch_lr,
        }
    }

    /// Records the end of an epoch. Plateau scheduling needs the validation loss.
    pub fn end_epoch(&mut self, valid_loss: Option<f64>) -> Result<(), TrainingError> {
        self.epochs_done += 1;
        match self.config {
            SchedulerConfig::Plateau { factor, patience, .. } => {
                let loss = valid_loss.ok_or(TrainingError::MissingValidationLoss)?;
                if self.best.is_none_or(|b| loss < b) {
                    self.best = Some(loss);
                    self.bad_epochs = 0;
                } else {
                    self.bad_epochs += 1;
                    if self.bad_epochs > patience {
                        self.epoch_lr *= factor;
                        self.bad_epochs = 0;
                    }
                }
            }
            SchedulerConfig::Linear { start, epochs } => {
                self.epoch_lr = (start * (1.0 - self.epochs_done as f64 / epochs as f64)).max(0.0);
            }
            SchedulerConfig::Noam { .. } | SchedulerConfig::Constant { .. } => {}
        }
        Ok(())
    }
}
