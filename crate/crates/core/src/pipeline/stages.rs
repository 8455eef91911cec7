//! Building blocks shared by the table runner and the standalone CLI stages.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ExperimentConfig, PipelineError, StageName, Trained};
use crate::data::{external_pairs, subset, synth_augment, view, Corpus, Example, Source, Split, ViewKind, Voice};
use crate::decoding::{decode_examples, write_decodes, BeamConfig};
use crate::model::{ModelConfig, Seq2SeqModel, TokenId, Vocabulary, MASK};
use crate::training::{train_stage_with, EpochRecord, StageResult, LOG_HEADER};
use crate::transfer::{save_checkpoint, Checkpoint};

const SUBSET_SEED_OFFSET: u64 = 300;
const INIT_SEED_OFFSET: u64 = 200;

pub fn speech_model_config(config: &ExperimentConfig, vocab: &Vocabulary) -> ModelConfig {
    ModelConfig::speech(config.speech_encoder.clone(), config.decoder.clone(), vocab.len())
}

pub fn text_model_config(config: &ExperimentConfig, vocab: &Vocabulary) -> ModelConfig {
    ModelConfig::text(config.text_encoder.clone(), config.decoder.clone(), vocab.len())
}

/// Freshly initialized model for a pre-training stage.
pub fn fresh_model(config: &ExperimentConfig, vocab: &Vocabulary, speech: bool) -> Result<Seq2SeqModel, PipelineError> {
    let c = config.reseeded();
    let (cfg, offset) = if speech {
        (speech_model_config(&c, vocab), 0)
    } else {
        (text_model_config(&c, vocab), 1)
    };
    Ok(Seq2SeqModel::new(
        cfg,
        vocab.clone(),
        c.seed.wrapping_add(INIT_SEED_OFFSET + offset),
    )?)
}

/// Training split for `fraction`: a seeded subset shared by every
/// fine-tuning stage. Pre-training stages always get the full split.
pub fn training_triplets(
    config: &ExperimentConfig,
    corpus: &Corpus,
    stage: StageName,
    fraction: f64,
) -> Result<Vec<crate::data::Triplet>, PipelineError> {
    if stage.uses_full_data() {
        return Ok(corpus.train.clone());
    }
    let seed = config.reseeded().seed.wrapping_add(SUBSET_SEED_OFFSET);
    Ok(subset(&corpus.train, fraction, seed)?)
}

/// (training, validation) examples of a stage.
pub fn stage_examples(
    config: &ExperimentConfig,
    corpus: &Corpus,
    stage: StageName,
    fraction: f64,
) -> Result<(Vec<Example>, Vec<Example>), PipelineError> {
    let c = config.reseeded();
    let kind = stage.view();
    let mut train = view(&training_triplets(&c, corpus, stage, fraction)?, kind, &c.lm_noise);
    if stage == StageName::B2 {
        let a = &c.augmentation;
        let pairs = external_pairs(&c.corpus, a.pairs)?;
        let voice = Voice::Synthetic {
            offset: a.voice_offset,
            noise: a.voice_noise,
        };
        train.extend(synth_augment(&pairs, &c.corpus, voice)?);
    }
    let valid = view(&corpus.valid, kind, &c.lm_noise);
    Ok((train, valid))
}

/// Trains one stage from `init` on its examples.
pub fn run_stage(
    config: &ExperimentConfig,
    corpus: &Corpus,
    stage: StageName,
    init: &Seq2SeqModel,
    fraction: f64,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<StageResult, PipelineError> {
    let c = config.reseeded();
    let (train, valid) = stage_examples(&c, corpus, stage, fraction)?;
    Ok(train_stage_with(
        init,
        &train,
        &valid,
        &stage.train_config(&c),
        on_epoch,
    )?)
}

/// Noise-free examples of one split.
pub fn split_examples(corpus: &Corpus, split: Split, kind: ViewKind) -> Vec<Example> {
    view(corpus.split(split), kind, &Default::default())
}

pub fn eval_examples(corpus: &Corpus, kind: ViewKind) -> Vec<Example> {
    split_examples(corpus, Split::Eval, kind)
}

/// `id<TAB>text` reference file for one split: summaries, or
/// transcriptions when `transcripts` is set.
pub fn write_references(corpus: &Corpus, split: Split, path: &Path, transcripts: bool) -> Result<(), PipelineError> {
    let lines: Vec<(String, String)> = corpus
        .split(split)
        .iter()
        .map(|t| {
            let tokens = if transcripts { &t.transcription } else { &t.summary };
            (t.id.clone(), corpus.vocab.decode(tokens))
        })
        .collect();
    write_decodes(path, lines.iter().map(|(a, b)| (a.as_str(), b.as_str()))).map_err(|e| PipelineError::io(path, e))
}

/// Beam-decodes `examples` and writes `id<TAB>text` lines.
pub fn decode_to_file(
    model: &Seq2SeqModel,
    examples: &[Example],
    beam: &BeamConfig,
    path: &Path,
) -> Result<Vec<(String, Vec<TokenId>)>, PipelineError> {
    let out = decode_examples(model, examples, beam)?;
    let texts: Vec<(String, String)> = out
        .iter()
        .map(|(id, t)| (id.clone(), model.vocab().decode(t)))
        .collect();
    write_decodes(path, texts.iter().map(|(a, b)| (a.as_str(), b.as_str()))).map_err(|e| PipelineError::io(path, e))?;
    Ok(out)
}

/// Cascade input: ASR output tokens as TSum source. An empty transcript
/// becomes a lone `<mask>` since the text encoder needs at least one token.
pub fn cascade_examples(asr_output: &[(String, Vec<TokenId>)], references: &[Example]) -> Vec<Example> {
    asr_output
        .iter()
        .zip(references)
        .map(|((id, tokens), r)| Example {
            id: id.clone(),
            source: Source::Tokens(if tokens.is_empty() { vec![MASK] } else { tokens.clone() }),
            target: r.target.clone(),
            artificial: false,
        })
        .collect()
}

pub fn sha_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Trains `stage` from `init` and writes into `dir`:
/// `<artifact>.ckpt`, `<artifact>.log.tsv` (one row per epoch, flushed as
/// training goes) and a line in `stages.tsv` naming the initialization.
/// Failures are wrapped with the stage name and the log path.
#[allow(clippy::too_many_arguments)]
pub fn train_to_dir(
    config: &ExperimentConfig,
    corpus: &Corpus,
    stage: StageName,
    init: &Seq2SeqModel,
    init_desc: &str,
    fraction: f64,
    dir: &Path,
    progress: &mut dyn FnMut(&str),
) -> Result<Trained, PipelineError> {
    let log_path = dir.join(format!("{}.log.tsv", stage.artifact()));
    let wrap = |source: PipelineError| PipelineError::Stage {
        stage: stage.artifact(),
        log: log_path.display().to_string(),
        source: Box::new(source),
    };
    let result = (|| {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        fs::write(&log_path, format!("{LOG_HEADER}\n")).map_err(|e| PipelineError::io(&log_path, e))?;
        let mut log_file = OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(|e| PipelineError::io(&log_path, e))?;
        let on_epoch = |r: &EpochRecord| {
            let _ = writeln!(
                log_file,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.epoch, r.step, r.lr, r.train_loss, r.valid_loss, r.valid_acc
            );
            progress(&format!(
                "epoch {} lr {:.2e} train {:.4} valid {:.4} acc {:.4}",
                r.epoch, r.lr, r.train_loss, r.valid_loss, r.valid_acc
            ));
        };
        let result = run_stage(config, corpus, stage, init, fraction, on_epoch)?;
        progress(&format!(
            "done, best epoch {} acc {:.4}",
            result.best_epoch, result.best_valid_acc
        ));
        Ok(result)
    })()
    .map_err(wrap)?;
    let checkpoint = Checkpoint::new(result.model, stage.provenance(), result.log.digest());
    let path = dir.join(format!("{}.ckpt", stage.artifact()));
    save_checkpoint(&checkpoint, &path)?;
    let hash = sha_file(&path)?;
    let manifest = dir.join("stages.tsv");
    let line = format!(
        "{}\t{}\t{}\t{}\t{}\t{}\n",
        stage.artifact(),
        checkpoint.provenance,
        hash,
        init_desc,
        checkpoint.log_digest,
        result.best_epoch
    );
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(&manifest)
        .and_then(|mut f| f.write_all(line.as_bytes()))
        .map_err(|e| PipelineError::io(&manifest, e))?;
    Ok(Trained { checkpoint, path, hash })
}
