//! Greedy and beam-search inference.
//!
//! A hypothesis scores `log P(y) + α·|y|`, where `|y|` counts generated
//! tokens including `<eos>`. Beam search can stop early once no active
//! hypothesis can reach the best finished score.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compute::Tensor;
use crate::data::Example;
use crate::model::{argmax, ModelError, Seq2SeqModel, TokenId, EOS, SOS};

/// Anything that yields next-token log-probabilities for a prefix.
pub trait StepScorer {
    fn sos(&self) -> TokenId {
        SOS
    }

    fn eos(&self) -> TokenId {
        EOS
    }

    /// Natural-log distribution over the vocabulary after `prefix`,
    /// which starts with [`StepScorer::sos`].
    fn log_probs(&self, prefix: &[TokenId]) -> Result<Vec<f64>, ModelError>;
}

/// A model with its encoder output for one utterance.
pub struct ModelScorer<'a> {
    pub model: &'a Seq2SeqModel,
    pub memory: Tensor,
}

impl StepScorer for ModelScorer<'_> {
    fn log_probs(&self, prefix: &[TokenId]) -> Result<Vec<f64>, ModelError> {
        self.model.next_log_probs(&self.memory, prefix)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub width: usize,
    /// Additive reward per generated token.
    pub length_penalty: f64,
    /// Maximum generated tokens, `<eos>` included.
    pub max_len: usize,
    pub end_detection: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            width: 8,
            length_penalty: 0.3,
            max_len: 32,
            end_detection: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Starts with `<sos>`; ends with `<eos>` unless cut at the length limit.
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub score: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Generated tokens without `<sos>` and `<eos>`.
    pub fn output(&self, eos: TokenId) -> Vec<TokenId> {
        let body = &self.tokens[1..];
        match body.split_last() {
            Some((&last, rest)) if last == eos => rest.to_vec(),
            _ => body.to_vec(),
        }
    }
}

/// Highest-probability token at each step (lowest id on ties) until
/// `<eos>` or `max_len` generated tokens.
pub fn greedy_decode<S: StepScorer + ?Sized>(scorer: &S, max_len: usize) -> Result<Vec<TokenId>, ModelError> {
    let mut prefix = vec![scorer.sos()];
    for _ in 0..max_len {
        let next = argmax(&scorer.log_probs(&prefix)?) as TokenId;
        if next == scorer.eos() {
            break;
        }
        prefix.push(next);
    }
    prefix.remove(0);
    Ok(prefix)
}

struct Candidate {
    score: f64,
    log_prob: f64,
    token: TokenId,
    parent: usize,
}

fn rank_candidates(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.token.cmp(&b.token))
        .then(a.parent.cmp(&b.parent))
}

fn rank_finished(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.tokens.len().cmp(&b.tokens.len()))
        .then(a.tokens.cmp(&b.tokens))
}

/// Stop when every hypothesis has finished, or when the best finished score
/// is at least the best active score plus the most any continuation can
/// still gain: `α·remaining` for `α ≥ 0`, and `α` (one more step) otherwise.
pub fn detect_end(active: &[Hypothesis], finished: &[Hypothesis], step: usize, config: &BeamConfig) -> bool {
    if active.is_empty() {
        return true;
    }
    if !config.end_detection || finished.is_empty() {
        return false;
    }
    let remaining = config.max_len.saturating_sub(step);
    if remaining == 0 {
        return true;
    }
    let alpha = config.length_penalty;
    let bound = if alpha >= 0.0 { alpha * remaining as f64 } else { alpha };
    let best_finished = finished.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
    let best_active = active.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
    best_finished >= best_active + bound
}

/// Finished hypotheses, best first. Ties in pruning go to the lower token
/// id, then the earlier parent; ties in the final ranking to the shorter
/// hypothesis.
pub fn beam_search<S: StepScorer + ?Sized>(scorer: &S, config: &BeamConfig) -> Result<Vec<Hypothesis>, ModelError> {
    let width = config.width.max(1);
    let alpha = config.length_penalty;
    let mut active = vec![Hypothesis {
        tokens: vec![scorer.sos()],
        log_prob: 0.0,
        score: 0.0,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for step in 1..=config.max_len {
        let mut candidates = Vec::new();
        for (parent, h) in active.iter().enumerate() {
            for (k, lp) in scorer.log_probs(&h.tokens)?.into_iter().enumerate() {
                candidates.push(Candidate {
                    score: h.score + lp + alpha,
                    log_prob: h.log_prob + lp,
                    token: k as TokenId,
                    parent,
                });
            }
        }
        candidates.sort_by(rank_candidates);
        candidates.truncate(width);
        let mut next = Vec::with_capacity(width);
        for c in candidates {
            let mut tokens = active[c.parent].tokens.clone();
            tokens.push(c.token);
            let done = c.token == scorer.eos() || step == config.max_len;
            let h = Hypothesis {
                tokens,
                log_prob: c.log_prob,
                score: c.score,
                finished: done,
            };
            if done {
                finished.push(h);
            } else {
                next.push(h);
            }
        }
        active = next;
        if detect_end(&active, &finished, step, config) {
            break;
        }
    }
    finished.sort_by(rank_finished);
    Ok(finished)
}

/// Best beam output for every example, without `<sos>`/`<eos>`.
pub fn decode_examples(
    model: &Seq2SeqModel,
    examples: &[Example],
    config: &BeamConfig,
) -> Result<Vec<(String, Vec<TokenId>)>, ModelError> {
    examples
        .iter()
        .map(|ex| {
            let scorer = ModelScorer {
                model,
                memory: model.encode(ex.source.as_input())?,
            };
            let best = beam_search(&scorer, config)?;
            let out = best.first().map(|h| h.output(EOS)).unwrap_or_default();
            Ok((ex.id.clone(), out))
        })
        .collect()
}

/// One `id<TAB>text` line per utterance.
pub fn format_decodes<'a>(lines: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    lines.into_iter().map(|(id, text)| format!("{id}\t{text}\n")).collect()
}

pub fn write_decodes<'a>(path: &Path, lines: impl IntoIterator<Item = (&'a str, &'a str)>) -> std::io::Result<()> {
    fs::write(path, format_decodes(lines))
}
