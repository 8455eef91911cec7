use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, PipelineError};
use crate::data::ViewKind;
use crate::training::TrainConfig;
use crate::transfer::{Provenance, Variant};

/// Rows of the results table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SystemId {
    #[serde(rename = "C-1")]
    C1,
    #[serde(rename = "B-1")]
    B1,
    #[serde(rename = "B-2")]
    B2,
    #[serde(rename = "P-1")]
    P1,
    #[serde(rename = "P-2")]
    P2,
    #[serde(rename = "P-3")]
    P3,
}

impl SystemId {
    pub const ALL: [SystemId; 6] = [
        SystemId::C1,
        SystemId::B1,
        SystemId::B2,
        SystemId::P1,
        SystemId::P2,
        SystemId::P3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemId::C1 => "C-1",
            SystemId::B1 => "B-1",
            SystemId::B2 => "B-2",
            SystemId::P1 => "P-1",
            SystemId::P2 => "P-2",
            SystemId::P3 => "P-3",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            SystemId::C1 => "cascade (ASR+TSum)",
            SystemId::B1 => "baseline E2E SSum",
            SystemId::B2 => "data augmentation",
            SystemId::P1 => "SSum enc + TSum dec",
            SystemId::P2 => "ASR enc + TSum dec",
            SystemId::P3 => "SSum enc + LM dec",
        }
    }

    /// Stages to run, dependencies first.
    pub fn stages(self) -> &'static [StageName] {
        use StageName::*;
        match self {
            SystemId::C1 => &[Asr, Lm, Tsum],
            SystemId::B1 => &[Asr, B1],
            SystemId::B2 => &[Asr, B1, B2],
            SystemId::P1 => &[Asr, B1, Lm, Tsum, P1],
            SystemId::P2 => &[Asr, Lm, Tsum, P2],
            SystemId::P3 => &[Asr, B1, Lm, P3],
        }
    }
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemId {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_uppercase().replace('-', "");
        SystemId::ALL
            .into_iter()
            .find(|id| id.name().replace('-', "") == norm)
            .ok_or_else(|| PipelineError::Config(format!("unknown system {s:?}")))
    }
}

/// Every trainable stage in the workflow. Each produces one checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    Asr,
    Lm,
    Tsum,
    /// SSum fine-tuned from ASR.
    B1,
    /// B-1 fine-tuned on real plus artificial data.
    B2,
    P1,
    P2,
    P3,
}

impl FromStr for StageName {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StageName::ALL
            .into_iter()
            .find(|n| n.artifact().eq_ignore_ascii_case(s))
            .ok_or_else(|| PipelineError::Config(format!("unknown stage {s:?}")))
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.artifact())
    }
}

/// How a stage's starting parameters are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    FreshSpeech,
    FreshText,
    From(StageName),
    Transplant(Variant),
}

impl StageName {
    pub const ALL: [StageName; 8] = [
        StageName::Asr,
        StageName::Lm,
        StageName::Tsum,
        StageName::B1,
        StageName::B2,
        StageName::P1,
        StageName::P2,
        StageName::P3,
    ];

    pub fn artifact(self) -> &'static str {
        match self {
            StageName::Asr => "asr",
            StageName::Lm => "lm",
            StageName::Tsum => "tsum",
            StageName::B1 => "b1",
            StageName::B2 => "b2",
            StageName::P1 => "p1",
            StageName::P2 => "p2",
            StageName::P3 => "p3",
        }
    }

    pub fn provenance(self) -> Provenance {
        match self {
            StageName::Asr => Provenance::Asr,
            StageName::Lm => Provenance::Lm,
            StageName::Tsum => Provenance::Tsum,
            StageName::B1 | StageName::B2 => Provenance::Ssum,
            StageName::P1 | StageName::P2 | StageName::P3 => Provenance::Transferred,
        }
    }

    pub fn init(self) -> Init {
        match self {
            StageName::Asr => Init::FreshSpeech,
            StageName::Lm => Init::FreshText,
            StageName::Tsum => Init::From(StageName::Lm),
            StageName::B1 => Init::From(StageName::Asr),
            StageName::B2 => Init::From(StageName::B1),
            StageName::P1 => Init::Transplant(Variant::P1),
            StageName::P2 => Init::Transplant(Variant::P2),
            StageName::P3 => Init::Transplant(Variant::P3),
        }
    }

    /// Provenance the starting checkpoint must carry; `None` for fresh stages.
    pub fn init_provenance(self) -> Option<Provenance> {
        match self.init() {
            Init::FreshSpeech | Init::FreshText => None,
            Init::From(s) => Some(s.provenance()),
            Init::Transplant(_) => Some(Provenance::Transferred),
        }
    }

    /// Stages whose checkpoints this one starts from.
    pub fn dependencies(self) -> Vec<StageName> {
        match self.init() {
            Init::FreshSpeech | Init::FreshText => vec![],
            Init::From(s) => vec![s],
            Init::Transplant(v) => {
                let (e, d) = v.sources();
                vec![stage_for(e), stage_for(d)]
            }
        }
    }

    pub fn view(self) -> ViewKind {
        match self {
            StageName::Asr => ViewKind::Asr,
            StageName::Lm => ViewKind::Lm,
            StageName::Tsum => ViewKind::Tsum,
            _ => ViewKind::Ssum,
        }
    }

    /// Pre-training always sees the full training split.
    pub fn uses_full_data(self) -> bool {
        matches!(self, StageName::Asr | StageName::Lm)
    }

    pub fn train_config(self, config: &ExperimentConfig) -> TrainConfig {
        let s = &config.stages;
        match self {
            StageName::Asr => s.asr.clone(),
            StageName::Lm => s.lm.clone(),
            StageName::Tsum => s.tsum.clone(),
            StageName::B1 => s.ssum.clone(),
            StageName::B2 => s.augmented.clone(),
            StageName::P1 | StageName::P2 | StageName::P3 => s.transfer.clone(),
        }
    }
}

/// The stage that publishes checkpoints of this provenance for transplanting.
pub fn stage_for(p: Provenance) -> StageName {
    match p {
        Provenance::Asr => StageName::Asr,
        Provenance::Lm => StageName::Lm,
        Provenance::Tsum => StageName::Tsum,
        Provenance::Ssum => StageName::B1,
        Provenance::Transferred => unreachable!("transferred checkpoints are never transplant sources"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedStage {
    pub name: StageName,
    pub init: Init,
    pub view: ViewKind,
    pub full_data: bool,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub system: SystemId,
    pub stages: Vec<PlannedStage>,
    pub fraction: f64,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl ExperimentPlan {
    pub fn new(config: &ExperimentConfig, system: SystemId, fraction: f64, out_dir: PathBuf) -> Self {
        let config = config.reseeded();
        let stages = system
            .stages()
            .iter()
            .map(|&name| PlannedStage {
                name,
                init: name.init(),
                view: name.view(),
                full_data: name.uses_full_data(),
                config: name.train_config(&config),
            })
            .collect();
        Self {
            system,
            stages,
            fraction,
            out_dir,
            seed: config.seed,
        }
    }

    /// Every stage's dependencies appear earlier in the plan.
    pub fn validate(&self) -> Result<(), PipelineError> {
        for (i, s) in self.stages.iter().enumerate() {
            for dep in s.name.dependencies() {
                if !self.stages[..i].iter().any(|p| p.name == dep) {
                    return Err(PipelineError::MissingPrerequisite {
                        stage: s.name.artifact(),
                        needs: dep.artifact(),
                    });
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over system, stage list and configs, fraction and seed.
    pub fn digest(&self) -> String {
        let json = serde_json::json!({
            "system": self.system,
            "stages": self.stages,
            "fraction": self.fraction,
            "seed": self.seed,
        });
        hex::encode(Sha256::digest(json.to_string().as_bytes()))
    }
}
