use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{stream_rng, Renderer, LM_NOISE_STREAM, SUBSET_STREAM, SYNTH_RENDER_STREAM};
use super::{CorpusConfig, DataError, Example, Source, TextPair, Triplet, Voice};
use crate::model::{TokenId, EOS, MASK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    /// features → transcription
    Asr,
    /// transcription → summary
    Tsum,
    /// features → summary
    Ssum,
    /// noised summary → summary
    Lm,
}

/// Denoising corruption for LM pre-training: a local shuffle in which no
/// token moves more than `shuffle_window − 1` places, then masking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmNoise {
    pub mask_prob: f64,
    pub shuffle_window: usize,
    pub seed: u64,
}

impl Default for LmNoise {
    fn default() -> Self {
        Self {
            mask_prob: 0.3,
            shuffle_window: 3,
            seed: 0,
        }
    }
}

impl LmNoise {
    pub fn apply(&self, tokens: &[TokenId], stream: u64) -> Vec<TokenId> {
        let mut rng = stream_rng(self.seed, LM_NOISE_STREAM + stream);
        let mut keyed: Vec<(f64, TokenId)> = tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let jitter = if self.shuffle_window > 1 {
                    rng.gen_range(0.0..self.shuffle_window as f64)
                } else {
                    0.0
                };
                (i as f64 + jitter, t)
            })
            .collect();
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
        keyed
            .into_iter()
            .map(|(_, t)| {
                if self.mask_prob > 0.0 && rng.gen_bool(self.mask_prob) {
                    MASK
                } else {
                    t
                }
            })
            .collect()
    }
}

fn with_eos(tokens: &[TokenId]) -> Vec<TokenId> {
    let mut t = tokens.to_vec();
    t.push(EOS);
    t
}

/// Pairs for one training stage. `noise` is only used by [`ViewKind::Lm`].
pub fn view(triplets: &[Triplet], kind: ViewKind, noise: &LmNoise) -> Vec<Example> {
    triplets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let (source, target) = match kind {
                ViewKind::Asr => (Source::Features(t.features.clone()), with_eos(&t.transcription)),
                ViewKind::Tsum => (Source::Tokens(t.transcription.clone()), with_eos(&t.summary)),
                ViewKind::Ssum => (Source::Features(t.features.clone()), with_eos(&t.summary)),
                ViewKind::Lm => {
                    let stream = ((t.split as u64) << 24) + i as u64;
                    (Source::Tokens(noise.apply(&t.summary, stream)), with_eos(&t.summary))
                }
            };
            Example {
                id: t.id.clone(),
                source,
                target,
                artificial: false,
            }
        })
        .collect()
}

/// `round(fraction · n)` items sampled without replacement, original order kept.
pub fn subset<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<Vec<T>, DataError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::InvalidFraction(fraction));
    }
    let k = (fraction * items.len() as f64).round() as usize;
    if k == 0 {
        return Err(DataError::EmptySubset {
            fraction,
            len: items.len(),
        });
    }
    if k == items.len() {
        return Ok(items.to_vec());
    }
    let mut rng = stream_rng(seed, SUBSET_STREAM);
    let mut idx = sample(&mut rng, items.len(), k).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| items[i].clone()).collect())
}

/// Renders external `(text, summary)` pairs with a synthetic voice into
/// speech-summary examples flagged as artificial.
pub fn synth_augment(external: &[TextPair], config: &CorpusConfig, voice: Voice) -> Result<Vec<Example>, DataError> {
    let vocab = config.vocabulary()?;
    let renderer = Renderer::new(config, vocab.len(), voice);
    Ok(external
        .iter()
        .enumerate()
        .map(|(i, (text, summary))| {
            let mut rng = stream_rng(config.seed, SYNTH_RENDER_STREAM + i as u64);
            Example {
                id: format!("synth-{i:05}"),
                source: Source::Features(renderer.render(text, &mut rng)),
                target: with_eos(summary),
                artificial: true,
            }
        })
        .collect())
}
