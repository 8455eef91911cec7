//! Losses, optimizers, learning-rate schedules, augmentation, and the
//! per-stage training loop.

mod augment;
mod batching;
mod loss;
mod optim;
mod schedule;
mod trainer;

pub use augment::{spec_augment, SpecAugmentConfig};
pub use batching::{homogeneous_batches, mixed_batch_count};
pub use loss::label_smoothed_ce;
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use schedule::{noam_lr, Scheduler, SchedulerConfig};
pub use trainer::{
    evaluate_teacher_forced, train_stage, train_stage_with, EpochRecord, StageKind, StageResult, TrainConfig, TrainLog,
    LOG_HEADER,
};

use thiserror::Error;

use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("label smoothing {0} is outside [0, 1)")]
    InvalidSmoothing(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("plateau scheduling needs a validation loss")]
    MissingValidationLoss,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{stage}: empty {split} set")]
    EmptyDataset { stage: StageKind, split: &'static str },
    #[error("{stage}: example {id} has the wrong source kind (expected {expected})")]
    WrongSource {
        stage: StageKind,
        id: String,
        expected: &'static str,
    },
    #[error("{stage} diverged in epoch {epoch}: {detail}")]
    Diverged {
        stage: StageKind,
        epoch: usize,
        detail: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}
