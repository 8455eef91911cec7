//! Experiment orchestration: stage graph, per-system plans, the table
//! runner and the fraction sweep.
//!
//! Every checkpoint, training log, decode file and score table is written
//! under one output directory so results can be re-scored from disk.

mod config;
mod plan;
mod results;
mod runner;
pub mod stages;

pub use config::{AugmentationConfig, ExperimentConfig, StageConfigs};
pub use plan::{stage_for, ExperimentPlan, Init, PlannedStage, StageName, SystemId};
pub use results::{ResultsTable, Row, SweepReport, PUBLISHED_METEOR, PUBLISHED_ORDERING};
pub use runner::{fraction_label, Runner, SystemOutcome, Trained};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::DataError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::training::TrainingError;
use crate::transfer::TransferError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("stage {stage} needs {needs}, which is not scheduled before it")]
    MissingPrerequisite { stage: &'static str, needs: &'static str },
    #[error("stage {stage} failed (log: {log}): {source}")]
    Stage {
        stage: &'static str,
        log: String,
        #[source]
        source: Box<PipelineError>,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
