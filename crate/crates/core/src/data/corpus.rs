use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::compute::Tensor;
use crate::model::{TokenId, Vocabulary};

/// Every summary starts with these words.
pub const FRAME_PREFIX: [&str; 3] = ["this", "video", "covers"];

pub const KEYWORDS: [&str; 12] = [
    "guitar",
    "chords",
    "pasta",
    "sauce",
    "engine",
    "brakes",
    "yoga",
    "breathing",
    "garden",
    "soil",
    "camera",
    "lighting",
];

pub const PLAIN_WORDS: [&str; 48] = [
    "the", "a", "and", "to", "of", "you", "we", "it", "is", "that", "with", "on", "for", "your", "just", "going",
    "now", "here", "so", "can", "get", "make", "one", "up", "out", "right", "then", "little", "really", "want", "take",
    "do", "about", "some", "time", "good", "next", "first", "hand", "back", "over", "way", "look", "put", "keep",
    "see", "start", "go",
];

const TEMPLATE_STREAM: u64 = 0;
const SYNTH_TEMPLATE_STREAM: u64 = 1 << 20;
const SPLIT_STREAM: u64 = 1 << 32;
pub(crate) const EXTERNAL_STREAM: u64 = 8 << 32;
pub(crate) const SYNTH_RENDER_STREAM: u64 = 9 << 32;
pub(crate) const LM_NOISE_STREAM: u64 = 10 << 32;
pub(crate) const SUBSET_STREAM: u64 = 11 << 32;

/// Independent generator for one purpose (`stream`) under the master seed.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    /// Number of entries taken from [`PLAIN_WORDS`].
    pub plain_words: usize,
    /// Number of entries taken from [`KEYWORDS`].
    pub keywords: usize,
    /// Frames rendered per word (`m`).
    pub frames_per_word: usize,
    pub feature_dim: usize,
    /// Standard deviation of the additive frame noise.
    pub noise: f64,
    pub min_words: usize,
    pub max_words: usize,
    /// Probability that a transcription word is a keyword.
    pub keyword_density: f64,
    /// Trailing frames beyond this are dropped.
    pub max_frames: usize,
    pub train: usize,
    pub valid: usize,
    pub eval: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            plain_words: 48,
            keywords: 12,
            frames_per_word: 8,
            feature_dim: 16,
            noise: 0.1,
            min_words: 6,
            max_words: 20,
            keyword_density: 0.2,
            max_frames: 160,
            train: 2000,
            valid: 200,
            eval: 200,
            seed: 0,
        }
    }
}

/// Split sizes of the published corpus, for reference.
pub const PUBLISHED_SPLITS: (usize, usize, usize) = (68_336, 1_600, 2_127);

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        if self.keywords == 0 || self.keywords > KEYWORDS.len() {
            return bad(format!(
                "keywords must be in 1..={}, got {}",
                KEYWORDS.len(),
                self.keywords
            ));
        }
        if self.plain_words == 0 || self.plain_words > PLAIN_WORDS.len() {
            return bad(format!(
                "plain words must be in 1..={}, got {}",
                PLAIN_WORDS.len(),
                self.plain_words
            ));
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad(format!("word range {}..={} is empty", self.min_words, self.max_words));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise {} must be finite and non-negative", self.noise));
        }
        if !(0.0..=1.0).contains(&self.keyword_density) {
            return bad(format!("keyword density {} is not a probability", self.keyword_density));
        }
        if self.train == 0 || self.valid == 0 || self.eval == 0 {
            return bad("split sizes must be at least 1".into());
        }
        if self.frames_per_word == 0 || self.feature_dim == 0 || self.max_frames == 0 {
            return bad("frame and feature sizes must be positive".into());
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Result<Vocabulary, DataError> {
        self.validate()?;
        let words = FRAME_PREFIX
            .iter()
            .chain(&KEYWORDS[..self.keywords])
            .chain(&PLAIN_WORDS[..self.plain_words]);
        Ok(Vocabulary::new(words.copied())?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Eval => "eval",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|x| x.name() == s)
    }

    fn stream(self) -> u64 {
        SPLIT_STREAM
            * match self {
                Split::Train => 1,
                Split::Valid => 2,
                Split::Eval => 3,
            }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub id: String,
    pub split: Split,
    /// `[T, F]`, values representable as `f32`.
    pub features: Tensor,
    pub transcription: Vec<TokenId>,
    pub summary: Vec<TokenId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub vocab: Vocabulary,
    pub train: Vec<Triplet>,
    pub valid: Vec<Triplet>,
    pub eval: Vec<Triplet>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Triplet] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Eval => &self.eval,
        }
    }
}

/// Speaker used to render words as frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Voice {
    /// The corpus voice: per-word templates with noise `config.noise`.
    Natural,
    /// A distinct voice for augmentation: every template is shifted by
    /// `offset · N(0, 1)` per value, and frames get noise `noise`.
    Synthetic { offset: f64, noise: f64 },
}

pub(crate) struct Renderer {
    templates: Vec<Vec<f64>>,
    noise: f64,
    m: usize,
    f: usize,
    max_frames: usize,
}

impl Renderer {
    pub fn new(cfg: &CorpusConfig, vocab_len: usize, voice: Voice) -> Self {
        let size = cfg.frames_per_word * cfg.feature_dim;
        let mut templates: Vec<Vec<f64>> = (0..vocab_len as u64)
            .map(|w| {
                let mut rng = stream_rng(cfg.seed, TEMPLATE_STREAM + w);
                (0..size).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
            })
            .collect();
        let noise = match voice {
            Voice::Natural => cfg.noise,
            Voice::Synthetic { offset, noise } => {
                for (w, t) in templates.iter_mut().enumerate() {
                    let mut rng = stream_rng(cfg.seed, SYNTH_TEMPLATE_STREAM + w as u64);
                    for v in t.iter_mut() {
                        *v += offset * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                noise
            }
        };
        Self {
            templates,
            noise,
            m: cfg.frames_per_word,
            f: cfg.feature_dim,
            max_frames: cfg.max_frames,
        }
    }

    /// Concatenated word templates plus noise, truncated to `max_frames`
    /// and rounded to `f32`.
    pub fn render(&self, words: &[TokenId], rng: &mut ChaCha8Rng) -> Tensor {
        let frames = (words.len() * self.m).min(self.max_frames);
        let mut data = Vec::with_capacity(frames * self.f);
        'outer: for &w in words {
            for v in &self.templates[w as usize] {
                if data.len() == frames * self.f {
                    break 'outer;
                }
                let noise = if self.noise > 0.0 {
                    self.noise * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                data.push((v + noise) as f32 as f64);
            }
        }
        Tensor::new(vec![frames, self.f], data).expect("rendered length matches shape")
    }

    pub fn template(&self, w: TokenId) -> &[f64] {
        &self.templates[w as usize]
    }
}

/// Recovers words from natural-voice features by nearest template per
/// `m`-frame block. Exact for noiseless, untruncated rendering.
pub fn match_templates(config: &CorpusConfig, features: &Tensor) -> Result<Vec<TokenId>, DataError> {
    let vocab = config.vocabulary()?;
    let r = Renderer::new(config, vocab.len(), Voice::Natural);
    let block = config.frames_per_word * config.feature_dim;
    Ok(features
        .data()
        .chunks(block)
        .map(|chunk| {
            let dist = |w: usize| -> f64 {
                chunk
                    .iter()
                    .zip(r.template(w as TokenId))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum()
            };
            (SPECIAL_COUNT..vocab.len())
                .min_by(|&a, &b| dist(a).total_cmp(&dist(b)))
                .expect("vocabulary has content words") as TokenId
        })
        .collect())
}

const SPECIAL_COUNT: usize = crate::model::SPECIAL_TOKENS.len();

/// Keywords of `transcription` in order, after the fixed frame prefix.
pub fn summary_rule(vocab: &Vocabulary, transcription: &[TokenId]) -> Vec<TokenId> {
    let mut out: Vec<TokenId> = FRAME_PREFIX.iter().filter_map(|w| vocab.id(w)).collect();
    out.extend(
        transcription
            .iter()
            .copied()
            .filter(|&t| vocab.token(t).is_some_and(|w| KEYWORDS.contains(&w))),
    );
    out
}

pub(crate) fn random_transcription(
    cfg: &CorpusConfig,
    vocab: &Vocabulary,
    rng: &mut ChaCha8Rng,
    words: (usize, usize),
    density: f64,
) -> Vec<TokenId> {
    let keyword_ids: Vec<TokenId> = KEYWORDS[..cfg.keywords].iter().filter_map(|w| vocab.id(w)).collect();
    let plain_ids: Vec<TokenId> = PLAIN_WORDS[..cfg.plain_words]
        .iter()
        .filter_map(|w| vocab.id(w))
        .collect();
    let len = rng.gen_range(words.0..=words.1);
    let mut out: Vec<TokenId> = (0..len)
        .map(|_| {
            if rng.gen_bool(density) {
                keyword_ids[rng.gen_range(0..keyword_ids.len())]
            } else {
                plain_ids[rng.gen_range(0..plain_ids.len())]
            }
        })
        .collect();
    if !out.iter().any(|t| keyword_ids.contains(t)) {
        let at = rng.gen_range(0..len);
        out[at] = keyword_ids[rng.gen_range(0..keyword_ids.len())];
    }
    out
}

pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus, DataError> {
    let vocab = config.vocabulary()?;
    let renderer = Renderer::new(config, vocab.len(), Voice::Natural);
    let make = |split: Split, n: usize| -> Vec<Triplet> {
        (0..n)
            .map(|i| {
                let mut rng = stream_rng(config.seed, split.stream() + i as u64);
                let transcription = random_transcription(
                    config,
                    &vocab,
                    &mut rng,
                    (config.min_words, config.max_words),
                    config.keyword_density,
                );
                let features = renderer.render(&transcription, &mut rng);
                let summary = summary_rule(&vocab, &transcription);
                Triplet {
                    id: format!("{}-{:05}", split.name(), i),
                    split,
                    features,
                    transcription,
                    summary,
                }
            })
            .collect()
    };
    Ok(Corpus {
        train: make(Split::Train, config.train),
        valid: make(Split::Valid, config.valid),
        eval: make(Split::Eval, config.eval),
        config: config.clone(),
        vocab,
    })
}

/// `(transcription, summary)` token sequences without audio.
pub type TextPair = (Vec<TokenId>, Vec<TokenId>);

/// A second text-only corpus in a different style (shorter, keyword-denser),
/// as `(transcription, summary)` pairs.
pub fn external_pairs(config: &CorpusConfig, n: usize) -> Result<Vec<TextPair>, DataError> {
    let vocab = config.vocabulary()?;
    let lo = config.min_words.div_ceil(2).max(1);
    let hi = config.max_words.div_ceil(2).max(lo);
    let density = (config.keyword_density * 1.5).min(1.0);
    Ok((0..n)
        .map(|i| {
            let mut rng = stream_rng(config.seed, EXTERNAL_STREAM + i as u64);
            let t = random_transcription(config, &vocab, &mut rng, (lo, hi), density);
            let s = summary_rule(&vocab, &t);
            (t, s)
        })
        .collect())
}
