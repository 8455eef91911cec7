use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::data::{CorpusConfig, LmNoise};
use crate::decoding::BeamConfig;
use crate::model::{DecoderConfig, SpeechEncoderConfig, TextEncoderConfig};
use crate::training::{AdamConfig, SchedulerConfig, SpecAugmentConfig, StageKind, TrainConfig};

/// Artificial speech-summary pairs for the augmented system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Number of external text pairs rendered with the synthetic voice.
    pub pairs: usize,
    /// Per-value template shift of the synthetic voice.
    pub voice_offset: f64,
    pub voice_noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfigs {
    pub asr: TrainConfig,
    pub lm: TrainConfig,
    pub tsum: TrainConfig,
    /// SSum fine-tuning of the baseline.
    pub ssum: TrainConfig,
    /// SSum fine-tuning on real plus artificial data.
    pub augmented: TrainConfig,
    /// Fine-tuning after transplantation.
    pub transfer: TrainConfig,
}

/// Everything a table run needs. All seeds are derived from `seed` by
/// [`ExperimentConfig::reseeded`]; seeds written elsewhere are overwritten.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub speech_encoder: SpeechEncoderConfig,
    pub text_encoder: TextEncoderConfig,
    pub decoder: DecoderConfig,
    pub lm_noise: LmNoise,
    pub augmentation: AugmentationConfig,
    pub beam: BeamConfig,
    pub stages: StageConfigs,
    /// Also decode with an untrained speech model as a reference row.
    pub untrained_reference: bool,
}

fn stage(kind: StageKind, batch_size: usize, epochs: usize, scheduler: SchedulerConfig, speech: bool) -> TrainConfig {
    TrainConfig {
        stage: kind,
        batch_size,
        epochs,
        scheduler,
        label_smoothing: 0.1,
        spec_augment: speech.then(SpecAugmentConfig::default),
        adam: AdamConfig::default(),
        clip_norm: 5.0,
        decoder_lr_scale: 1.0,
        seed: 0,
    }
}

impl Default for ExperimentConfig {
    /// Desk-scale settings; a full table on the default corpus takes minutes on one core.
    fn default() -> Self {
        let plateau = |start| SchedulerConfig::Plateau {
            start,
            factor: 0.5,
            patience: 1,
        };
        Self {
            seed: 0,
            corpus: CorpusConfig::default(),
            speech_encoder: SpeechEncoderConfig::toy(),
            text_encoder: TextEncoderConfig::toy(),
            decoder: DecoderConfig::toy(),
            lm_noise: LmNoise::default(),
            augmentation: AugmentationConfig {
                pairs: 1000,
                voice_offset: 0.3,
                voice_noise: 0.05,
            },
            beam: BeamConfig::default(),
            stages: StageConfigs {
                asr: stage(
                    StageKind::AsrPretrain,
                    8,
                    10,
                    SchedulerConfig::Noam {
                        peak: 4e-3,
                        warmup: 400,
                    },
                    true,
                ),
                lm: stage(
                    StageKind::LmPretrain,
                    8,
                    10,
                    SchedulerConfig::Noam {
                        peak: 4e-3,
                        warmup: 400,
                    },
                    false,
                ),
                tsum: stage(
                    StageKind::TsumFinetune,
                    8,
                    8,
                    SchedulerConfig::Linear { start: 1e-3, epochs: 8 },
                    false,
                ),
                ssum: stage(StageKind::SsumFinetune, 8, 8, plateau(1e-3), true),
                augmented: TrainConfig {
                    decoder_lr_scale: 10.0,
                    ..stage(StageKind::SsumFinetune, 8, 4, plateau(2e-4), true)
                },
                transfer: stage(StageKind::TransferFinetune, 8, 6, plateau(1e-3), true),
            },
            untrained_reference: true,
        }
    }
}

impl ExperimentConfig {
    /// Published settings, kept for reference; the synthetic corpus cannot
    /// feed models of this size.
    pub fn full_scale() -> Self {
        let plateau = SchedulerConfig::Plateau {
            start: 1e-4,
            factor: 0.5,
            patience: 1,
        };
        let mut c = Self {
            speech_encoder: SpeechEncoderConfig::full_scale(),
            text_encoder: TextEncoderConfig::full_scale(),
            decoder: DecoderConfig::full_scale(),
            beam: BeamConfig {
                width: 8,
                length_penalty: 0.3,
                // sos plus this many tokens must fit the decoder position table
                max_len: 1023,
                end_detection: true,
            },
            ..Self::default()
        };
        c.corpus.feature_dim = 43;
        (c.corpus.train, c.corpus.valid, c.corpus.eval) = crate::data::PUBLISHED_SPLITS;
        c.stages.asr.scheduler = SchedulerConfig::Noam {
            peak: 2e-3,
            warmup: 40_000,
        };
        c.stages.asr.batch_size = 512;
        c.stages.ssum.scheduler = plateau.clone();
        c.stages.ssum.batch_size = 30;
        c.stages.transfer.scheduler = plateau.clone();
        c.stages.transfer.batch_size = 30;
        c.stages.augmented.scheduler = plateau;
        c.stages.augmented.batch_size = 30;
        c.stages.augmented.decoder_lr_scale = 10.0;
        c.stages.tsum.scheduler = SchedulerConfig::Linear {
            start: 5e-5,
            epochs: 20,
        };
        c.stages.tsum.epochs = 20;
        c.stages.tsum.batch_size = 8;
        c
    }

    /// Tiny corpus and one epoch per stage: exercises every code path of a
    /// table run in well under a minute. Scores are meaningless.
    pub fn smoke() -> Self {
        let mut c = Self::default();
        c.corpus.train = 48;
        c.corpus.valid = 8;
        c.corpus.eval = 8;
        c.corpus.max_words = 10;
        c.augmentation.pairs = 16;
        c.beam.width = 2;
        c.beam.max_len = 12;
        for t in [
            &mut c.stages.asr,
            &mut c.stages.lm,
            &mut c.stages.tsum,
            &mut c.stages.ssum,
            &mut c.stages.augmented,
            &mut c.stages.transfer,
        ] {
            t.epochs = 1;
            if let SchedulerConfig::Noam { warmup, .. } = &mut t.scheduler {
                *warmup = 10;
            }
            if let SchedulerConfig::Linear { epochs, .. } = &mut t.scheduler {
                *epochs = 1;
            }
        }
        c
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let c: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.corpus.validate()?;
        let expected = [
            (&self.stages.asr, StageKind::AsrPretrain, "asr"),
            (&self.stages.lm, StageKind::LmPretrain, "lm"),
            (&self.stages.tsum, StageKind::TsumFinetune, "tsum"),
            (&self.stages.ssum, StageKind::SsumFinetune, "ssum"),
            (&self.stages.augmented, StageKind::SsumFinetune, "augmented"),
            (&self.stages.transfer, StageKind::TransferFinetune, "transfer"),
        ];
        for (cfg, kind, name) in expected {
            if cfg.stage != kind {
                return Err(PipelineError::Config(format!(
                    "stages.{name} must have stage = \"{kind}\", found \"{}\"",
                    cfg.stage
                )));
            }
            cfg.validate()
                .map_err(|e| PipelineError::Config(format!("stages.{name}: {e}")))?;
        }
        if self.speech_encoder.feature_dim != self.corpus.feature_dim {
            return Err(PipelineError::Config(format!(
                "speech encoder expects {} features, corpus renders {}",
                self.speech_encoder.feature_dim, self.corpus.feature_dim
            )));
        }
        if self.beam.width == 0 || self.beam.max_len == 0 || self.beam.max_len >= self.decoder.max_len {
            return Err(PipelineError::Config(format!(
                "beam needs width ≥ 1 and 1 ≤ max_len < decoder max_len {}",
                self.decoder.max_len
            )));
        }
        Ok(())
    }

    /// Copy with every component seed derived from `self.seed`.
    pub fn reseeded(&self) -> Self {
        let mut c = self.clone();
        let s = self.seed;
        c.corpus.seed = s;
        c.lm_noise.seed = s.wrapping_add(1);
        for (i, t) in [
            &mut c.stages.asr,
            &mut c.stages.lm,
            &mut c.stages.tsum,
            &mut c.stages.ssum,
            &mut c.stages.augmented,
            &mut c.stages.transfer,
        ]
        .into_iter()
        .enumerate()
        {
            t.seed = s.wrapping_add(100 + i as u64);
        }
        c
    }

    /// SHA-256 of the canonical JSON of the reseeded config.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(&self.reseeded()).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
