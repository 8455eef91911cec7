use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{clip_grad_norm, homogeneous_batches, spec_augment, Adam, AdamConfig, Scheduler, SchedulerConfig};
use super::{SpecAugmentConfig, TrainingError};
use crate::compute::ComputeError;
use crate::compute::Tensor;
use crate::data::{Example, Source};
use crate::model::{EncoderConfig, ModelError, Seq2SeqModel, SourceInput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageKind {
    AsrPretrain,
    LmPretrain,
    SsumFinetune,
    TsumFinetune,
    TransferFinetune,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::AsrPretrain => "asr-pretrain",
            StageKind::LmPretrain => "lm-pretrain",
            StageKind::SsumFinetune => "ssum-finetune",
            StageKind::TsumFinetune => "tsum-finetune",
            StageKind::TransferFinetune => "transfer-finetune",
        }
    }

    pub fn speech_input(self) -> bool {
        !matches!(self, StageKind::LmPretrain | StageKind::TsumFinetune)
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: StageKind,
    /// Samples per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub scheduler: SchedulerConfig,
    pub label_smoothing: f64,
    /// Applied to speech features only; `None` disables it.
    pub spec_augment: Option<SpecAugmentConfig>,
    pub adam: AdamConfig,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    /// Learning-rate multiplier for `decoder.*` parameters.
    pub decoder_lr_scale: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(TrainingError::InvalidSmoothing(self.label_smoothing));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainingError::InvalidConfig(
                "batch size and epochs must be at least 1".into(),
            ));
        }
        // negated so that NaN is rejected as well
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.clip_norm > 0.0) || !(self.decoder_lr_scale >= 0.0) {
            return Err(TrainingError::InvalidConfig(
                "clip norm must be positive and the decoder lr scale non-negative".into(),
            ));
        }
        self.scheduler.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Learning rate of the last step in the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Parameters with an all-zero accumulated gradient, per epoch (epoch, names).
    pub untouched: Vec<(usize, Vec<String>)>,
}

pub const LOG_HEADER: &str = "epoch\tstep\tlr\ttrain_loss\tvalid_loss\tvalid_acc";

impl TrainLog {
    /// Tab-separated records under [`LOG_HEADER`].
    pub fn to_tsv(&self) -> String {
        let mut s = format!("{LOG_HEADER}\n");
        for r in &self.records {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.epoch, r.step, r.lr, r.train_loss, r.valid_loss, r.valid_acc
            ));
        }
        s
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_tsv().as_bytes()))
    }
}

pub struct StageResult {
    /// Parameters from the epoch with the best validation accuracy.
    pub model: Seq2SeqModel,
    pub log: TrainLog,
    pub best_epoch: usize,
    pub best_valid_acc: f64,
}

/// Token-weighted teacher-forced loss and next-token accuracy over `examples`.
pub fn evaluate_teacher_forced(model: &Seq2SeqModel, examples: &[Example], eps: f64) -> Result<(f64, f64), ModelError> {
    let (mut loss, mut correct, mut counted) = (0.0, 0usize, 0usize);
    for ex in examples {
        let (l, c, n) = model.loss(ex.source.as_input(), &ex.target, eps)?;
        loss += l * n as f64;
        correct += c;
        counted += n;
    }
    let n = counted.max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

fn check_examples(stage: StageKind, split: &'static str, examples: &[Example]) -> Result<(), TrainingError> {
    if examples.is_empty() {
        return Err(TrainingError::EmptyDataset { stage, split });
    }
    let expected = if stage.speech_input() { "features" } else { "tokens" };
    if let Some(ex) = examples.iter().find(|e| e.source.is_features() != stage.speech_input()) {
        return Err(TrainingError::WrongSource {
            stage,
            id: ex.id.clone(),
            expected,
        });
    }
    Ok(())
}

fn diverged(stage: StageKind, epoch: usize) -> impl Fn(TrainingError) -> TrainingError {
    move |e| match e {
        TrainingError::NonFiniteGradient(p) => TrainingError::Diverged {
            stage,
            epoch,
            detail: format!("non-finite gradient for {p}"),
        },
        TrainingError::Model(ModelError::Compute(ComputeError::NonFinite { op })) => TrainingError::Diverged {
            stage,
            epoch,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// Teacher-forced minibatch training of every parameter.
pub fn train_stage(
    model: &Seq2SeqModel,
    train: &[Example],
    valid: &[Example],
    config: &TrainConfig,
) -> Result<StageResult, TrainingError> {
    train_stage_with(model, train, valid, config, |_| {})
}

/// [`train_stage`] with a callback after each epoch.
pub fn train_stage_with(
    model: &Seq2SeqModel,
    train: &[Example],
    valid: &[Example],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<StageResult, TrainingError> {
    config.validate()?;
    let stage = config.stage;
    check_examples(stage, "training", train)?;
    check_examples(stage, "validation", valid)?;
    let speech_model = matches!(model.config().encoder, EncoderConfig::Speech(_));
    if speech_model != stage.speech_input() {
        return Err(TrainingError::InvalidConfig(format!(
            "{stage} cannot train a {} encoder",
            model.config().encoder.kind()
        )));
    }

    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(model.params(), config.adam.clone());
    let mut scheduler = Scheduler::new(config.scheduler.clone())?;
    let scales: Vec<f64> = model
        .params()
        .names()
        .iter()
        .map(|n| {
            if n.starts_with("decoder.") {
                config.decoder_lr_scale
            } else {
                1.0
            }
        })
        .collect();
    let eps = config.label_smoothing;
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, Seq2SeqModel)> = None;

    for epoch in 1..=config.epochs {
        let fail = diverged(stage, epoch);
        let batches = homogeneous_batches(train, config.batch_size, &mut rng);
        let mut touched = vec![false; model.params().len()];
        let (mut loss_sum, mut loss_count) = (0.0, 0usize);
        let mut lr = 0.0;
        for batch in &batches {
            let mut grads: Vec<Option<Tensor>> = vec![None; model.params().len()];
            for &i in batch {
                let ex = &train[i];
                let augmented;
                let src = match (&ex.source, &config.spec_augment) {
                    (Source::Features(x), Some(sa)) => {
                        augmented = spec_augment(x, sa, &mut rng);
                        SourceInput::Features(&augmented)
                    }
                    _ => ex.source.as_input(),
                };
                let signal = model
                    .loss_and_gradients(src, &ex.target, eps)
                    .map_err(|e| fail(e.into()))?;
                if !signal.loss.is_finite() {
                    return Err(TrainingError::Diverged {
                        stage,
                        epoch,
                        detail: format!("loss {} on {}", signal.loss, ex.id),
                    });
                }
                loss_sum += signal.loss;
                loss_count += 1;
                for (id, g) in signal.gradients {
                    match &mut grads[id.index()] {
                        Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                        slot => *slot = Some(g),
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for (i, g) in grads.iter_mut().enumerate() {
                if let Some(g) = g {
                    g.data_mut().iter_mut().for_each(|v| *v *= inv);
                    touched[i] |= g.data().iter().any(|&v| v != 0.0);
                }
            }
            clip_grad_norm(&mut grads, config.clip_norm);
            lr = scheduler.lr(adam.steps() + 1);
            adam.step_scaled(model.params_mut(), &grads, lr, &scales)
                .map_err(&fail)?;
        }

        let (valid_loss, valid_acc) = evaluate_teacher_forced(&model, valid, eps).map_err(|e| fail(e.into()))?;
        if !valid_loss.is_finite() {
            return Err(TrainingError::Diverged {
                stage,
                epoch,
                detail: format!("validation loss {valid_loss}"),
            });
        }
        scheduler.end_epoch(Some(valid_loss))?;
        let untouched: Vec<String> = touched
            .iter()
            .enumerate()
            .filter(|(_, &t)| !t)
            .map(|(i, _)| model.params().names()[i].clone())
            .collect();
        if !untouched.is_empty() {
            log.untouched.push((epoch, untouched));
        }
        let record = EpochRecord {
            epoch,
            step: adam.steps(),
            lr,
            train_loss: loss_sum / loss_count as f64,
            valid_loss,
            valid_acc,
        };
        on_epoch(&record);
        log.records.push(record);
        if best.as_ref().is_none_or(|(acc, _, _)| valid_acc > *acc) {
            best = Some((valid_acc, epoch, model.clone()));
        }
    }

    let (best_valid_acc, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(StageResult {
        model,
        log,
        best_epoch,
        best_valid_acc,
    })
}
