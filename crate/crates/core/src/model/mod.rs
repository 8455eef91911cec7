//! Encoder-decoder model.
//!
//! Speech models use a conv2d sub-sampling front end and Conformer blocks
//! with relative positional attention; text models (the denoising LM and the
//! TSum model) use a Transformer encoder over token embeddings. The decoder is
//! shared by both: token embedding plus learned absolute positions, causal
//! self-attention, source-target attention, and an output projection.

mod config;
mod layers;
mod params;
mod vocab;

pub use config::{DecoderConfig, EncoderConfig, ModelConfig, SpeechEncoderConfig, TextEncoderConfig, FULL_VOCAB_SIZE};
pub use params::{ParamId, ParamStore};
pub use vocab::{TokenId, Vocabulary, EOS, MASK, PAD, SOS, SPECIAL_TOKENS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::compute::{ComputeError, Tensor, Var};
use layers::{
    causal_mask, ConformerBlock, Forward, LayerNorm, Linear, RelativePositions, Subsampling, TransformerBlock,
};
use params::Builder;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Compute(#[from] ComputeError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("feature dimension {found} does not match configured {expected}")]
    FeatureDimMismatch { expected: usize, found: usize },
    #[error("input of length {len} is shorter than the minimum {min}")]
    InputTooShort { len: usize, min: usize },
    #[error("input of length {len} exceeds the maximum {max}")]
    InputTooLong { len: usize, max: usize },
    #[error("{encoder} encoder cannot consume {input} input")]
    WrongInputKind { encoder: &'static str, input: &'static str },
    #[error("token id {token} is outside the vocabulary of {vocab}")]
    TokenOutOfRange { token: TokenId, vocab: usize },
    #[error("decoder prefix must start with <sos>")]
    PrefixWithoutSos,
    #[error("decoder prefix is empty")]
    EmptyPrefix,
    #[error("target sequence is empty")]
    EmptyTarget,
    #[error("target sequence must end with <eos>")]
    TargetWithoutEos,
    #[error("duplicate parameter {0}")]
    DuplicateParameter(String),
    #[error("missing parameter {0}")]
    MissingParameter(String),
    #[error("unexpected parameter {0}")]
    UnexpectedParameter(String),
    #[error("parameter {name} has shape {found:?}, expected {expected:?}")]
    ParameterShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("vocabulary has {found} tokens but the config expects {expected}")]
    VocabularySize { expected: usize, found: usize },
    #[error("duplicate token {0}")]
    DuplicateToken(String),
    #[error("unknown token {0}")]
    UnknownToken(String),
    #[error("invalid token {0:?}")]
    InvalidToken(String),
    #[error("vocabulary must start with the reserved tokens {SPECIAL_TOKENS:?}")]
    MissingSpecialTokens,
}

/// What the encoder consumes: `[T, F]` acoustic features or a token sequence.
#[derive(Clone, Copy, Debug)]
pub enum SourceInput<'a> {
    Features(&'a Tensor),
    Tokens(&'a [TokenId]),
}

impl SourceInput<'_> {
    fn kind(&self) -> &'static str {
        match self {
            SourceInput::Features(_) => "speech",
            SourceInput::Tokens(_) => "text",
        }
    }
}

#[derive(Clone, Debug)]
enum Encoder {
    Speech {
        subsample: Subsampling,
        rel: ParamId,
        blocks: Vec<ConformerBlock>,
        cfg: SpeechEncoderConfig,
    },
    Text {
        embed: ParamId,
        pos: ParamId,
        blocks: Vec<TransformerBlock>,
        norm: LayerNorm,
        max_len: usize,
    },
}

#[derive(Clone, Debug)]
struct Decoder {
    embed: ParamId,
    pos: ParamId,
    blocks: Vec<TransformerBlock>,
    norm: LayerNorm,
    out: Linear,
}

/// Result of one teacher-forced training evaluation.
pub struct TrainingSignal {
    pub loss: f64,
    /// Gradients of every parameter the loss touched.
    pub gradients: Vec<(ParamId, Tensor)>,
    /// Positions where the argmax prediction equals the target.
    pub correct: usize,
    /// Non-padding target positions.
    pub counted: usize,
}

#[derive(Clone, Debug)]
pub struct Seq2SeqModel {
    config: ModelConfig,
    vocab: Vocabulary,
    params: ParamStore,
    encoder: Encoder,
    decoder: Decoder,
}

fn build(config: &ModelConfig, seed: u64) -> Result<(ParamStore, Encoder, Decoder), ModelError> {
    config.validate()?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder::new(&mut store, &mut rng);
    let k = config.vocab_size;
    let encoder = b.scope("encoder", |b| match &config.encoder {
        EncoderConfig::Speech(c) => {
            let subsample = Subsampling::build(
                b,
                "subsample",
                c.conv_layers,
                c.strided_layers(),
                c.conv_channels,
                c.reduced_feature_dim(),
                c.dim,
            )?;
            let rel = b.xavier("rel_pos", 2 * c.rel_clip + 1, c.dim / c.heads)?;
            let blocks = (0..c.layers)
                .map(|i| ConformerBlock::build(b, &format!("layers.{i}"), c.dim, c.heads, c.ff_dim, c.conv_kernel))
                .collect::<Result<_, _>>()?;
            Ok(Encoder::Speech {
                subsample,
                rel,
                blocks,
                cfg: c.clone(),
            })
        }
        EncoderConfig::Text(c) => {
            let embed = b.xavier("embed", k, c.dim)?;
            let pos = b.xavier("pos", c.max_len, c.dim)?;
            let blocks = (0..c.layers)
                .map(|i| TransformerBlock::build(b, &format!("layers.{i}"), c.dim, c.heads, c.ff_dim, false))
                .collect::<Result<_, _>>()?;
            let norm = LayerNorm::build(b, "norm", c.dim)?;
            Ok(Encoder::Text {
                embed,
                pos,
                blocks,
                norm,
                max_len: c.max_len,
            })
        }
    })?;
    let d = &config.decoder;
    let decoder = b.scope("decoder", |b| {
        let embed = b.xavier("embed", k, d.dim)?;
        let pos = b.xavier("pos", d.max_len, d.dim)?;
        let blocks = (0..d.layers)
            .map(|i| TransformerBlock::build(b, &format!("layers.{i}"), d.dim, d.heads, d.ff_dim, true))
            .collect::<Result<_, _>>()?;
        let norm = LayerNorm::build(b, "norm", d.dim)?;
        let out = Linear::build(b, "out", d.dim, k)?;
        Ok(Decoder {
            embed,
            pos,
            blocks,
            norm,
            out,
        })
    })?;
    Ok((store, encoder, decoder))
}

/// Models are equal when config, vocabulary and every parameter are.
impl PartialEq for Seq2SeqModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.vocab == other.vocab && self.params == other.params
    }
}

impl Seq2SeqModel {
    /// Fresh model with Xavier-uniform matrices, zero biases and unit norm gains.
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self, ModelError> {
        if vocab.len() != config.vocab_size {
            return Err(ModelError::VocabularySize {
                expected: config.vocab_size,
                found: vocab.len(),
            });
        }
        let (params, encoder, decoder) = build(&config, seed)?;
        Ok(Self {
            config,
            vocab,
            params,
            encoder,
            decoder,
        })
    }

    /// Assembles a model from existing named tensors. Every parameter the
    /// config implies must be present exactly once with the right shape.
    pub fn from_named<'a, I>(config: ModelConfig, vocab: Vocabulary, named: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (&'a str, Tensor)>,
    {
        let mut model = Self::new(config, vocab, 0)?;
        let mut seen = vec![false; model.params.len()];
        for (name, tensor) in named {
            let id = model
                .params
                .id(name)
                .ok_or_else(|| ModelError::UnexpectedParameter(name.to_string()))?;
            if std::mem::replace(&mut seen[id.0], true) {
                return Err(ModelError::DuplicateParameter(name.to_string()));
            }
            model.params.set(name, tensor)?;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(ModelError::MissingParameter(model.params.names()[missing].clone()));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.element_count()
    }

    /// Runs the encoder: `[T, F]` features give `[⌈T/r⌉, d]`; tokens give `[len, d]`.
    pub fn encode(&self, src: SourceInput) -> Result<Tensor, ModelError> {
        let mut f = Forward::new(&self.params, false);
        let h = self.encode_var(&mut f, src)?;
        Ok(f.tape.value(h).clone())
    }

    /// Next-token distribution after `prefix` (which starts with `<sos>`).
    pub fn decode_step(&self, memory: &Tensor, prefix: &[TokenId]) -> Result<Vec<f64>, ModelError> {
        let logits = self.last_logits(memory, prefix)?;
        let mut p = vec![0.0; logits.len()];
        softmax(&logits, &mut p);
        Ok(p)
    }

    /// Natural-log next-token probabilities after `prefix`.
    pub fn next_log_probs(&self, memory: &Tensor, prefix: &[TokenId]) -> Result<Vec<f64>, ModelError> {
        let logits = self.last_logits(memory, prefix)?;
        let lse = crate::compute::log_sum_exp(&logits);
        Ok(logits.iter().map(|z| z - lse).collect())
    }

    fn last_logits(&self, memory: &Tensor, prefix: &[TokenId]) -> Result<Vec<f64>, ModelError> {
        self.check_prefix(prefix)?;
        let mut f = Forward::new(&self.params, false);
        let mem = f.tape.constant(memory.clone());
        let logits = self.decode_logits(&mut f, mem, prefix)?;
        Ok(f.tape.value(logits).row(prefix.len() - 1).to_vec())
    }

    /// Distributions `[L, K]` for each target position, conditioning step `l`
    /// on the ground-truth tokens before it.
    pub fn forward_teacher_forced(&self, src: SourceInput, targets: &[TokenId]) -> Result<Tensor, ModelError> {
        let inputs = self.teacher_inputs(targets)?;
        let mut f = Forward::new(&self.params, false);
        let mem = self.encode_var(&mut f, src)?;
        let logits = self.decode_logits(&mut f, mem, &inputs)?;
        let probs = f.tape.softmax_rows(logits)?;
        Ok(f.tape.value(probs).clone())
    }

    /// Label-smoothed teacher-forced loss without gradients.
    pub fn loss(&self, src: SourceInput, targets: &[TokenId], eps: f64) -> Result<(f64, usize, usize), ModelError> {
        let (loss, _, correct, counted) = self.run_loss(src, targets, eps, false)?;
        Ok((loss, correct, counted))
    }

    /// Label-smoothed teacher-forced loss with gradients for every touched parameter.
    pub fn loss_and_gradients(
        &self,
        src: SourceInput,
        targets: &[TokenId],
        eps: f64,
    ) -> Result<TrainingSignal, ModelError> {
        let (loss, gradients, correct, counted) = self.run_loss(src, targets, eps, true)?;
        Ok(TrainingSignal {
            loss,
            gradients,
            correct,
            counted,
        })
    }

    #[allow(clippy::type_complexity)]
    fn run_loss(
        &self,
        src: SourceInput,
        targets: &[TokenId],
        eps: f64,
        track: bool,
    ) -> Result<(f64, Vec<(ParamId, Tensor)>, usize, usize), ModelError> {
        let inputs = self.teacher_inputs(targets)?;
        let mut f = Forward::new(&self.params, track);
        let mem = self.encode_var(&mut f, src)?;
        let logits = self.decode_logits(&mut f, mem, &inputs)?;
        let labels: Vec<Option<usize>> = targets.iter().map(|&t| (t != PAD).then_some(t as usize)).collect();
        let loss = f.tape.ls_cross_entropy(logits, &labels, eps)?;
        let (mut correct, mut counted) = (0, 0);
        let lv = f.tape.value(logits);
        for (row, label) in labels.iter().enumerate() {
            let Some(y) = label else { continue };
            counted += 1;
            if argmax(lv.row(row)) == *y {
                correct += 1;
            }
        }
        let value = f.tape.value(loss).data()[0];
        let gradients = if track {
            let mut grads = f.tape.backward(loss)?;
            f.bound()
                .filter_map(|(id, var)| grads.take(var).map(|g| (id, g)))
                .collect()
        } else {
            Vec::new()
        };
        Ok((value, gradients, correct, counted))
    }

    fn teacher_inputs(&self, targets: &[TokenId]) -> Result<Vec<TokenId>, ModelError> {
        let last = targets.iter().rposition(|&t| t != PAD).ok_or(ModelError::EmptyTarget)?;
        if targets[last] != EOS {
            return Err(ModelError::TargetWithoutEos);
        }
        self.check_tokens(targets)?;
        if targets.len() > self.config.decoder.max_len {
            return Err(ModelError::InputTooLong {
                len: targets.len(),
                max: self.config.decoder.max_len,
            });
        }
        let mut inputs = Vec::with_capacity(targets.len());
        inputs.push(SOS);
        inputs.extend_from_slice(&targets[..targets.len() - 1]);
        Ok(inputs)
    }

    fn check_prefix(&self, prefix: &[TokenId]) -> Result<(), ModelError> {
        match prefix.first() {
            None => return Err(ModelError::EmptyPrefix),
            Some(&t) if t != SOS => return Err(ModelError::PrefixWithoutSos),
            _ => {}
        }
        if prefix.len() > self.config.decoder.max_len {
            return Err(ModelError::InputTooLong {
                len: prefix.len(),
                max: self.config.decoder.max_len,
            });
        }
        self.check_tokens(prefix)
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<(), ModelError> {
        match tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            Some(&token) => Err(ModelError::TokenOutOfRange {
                token,
                vocab: self.config.vocab_size,
            }),
            None => Ok(()),
        }
    }

    fn encode_var(&self, f: &mut Forward, src: SourceInput) -> Result<Var, ModelError> {
        match (&self.encoder, src) {
            (
                Encoder::Speech {
                    subsample,
                    rel,
                    blocks,
                    cfg,
                },
                SourceInput::Features(x),
            ) => {
                let (t, feat) = match x.shape() {
                    [t, feat] => (*t, *feat),
                    s => {
                        return Err(ModelError::Compute(ComputeError::ShapeMismatch {
                            op: "encode",
                            detail: format!("features must be [T, F], got {s:?}"),
                        }))
                    }
                };
                if feat != cfg.feature_dim {
                    return Err(ModelError::FeatureDimMismatch {
                        expected: cfg.feature_dim,
                        found: feat,
                    });
                }
                if t < cfg.subsample_rate {
                    return Err(ModelError::InputTooShort {
                        len: t,
                        min: cfg.subsample_rate,
                    });
                }
                let input = f.tape.constant(x.clone());
                let mut h = subsample.forward(f, input)?;
                let rel = RelativePositions {
                    table: *rel,
                    clip: cfg.rel_clip,
                };
                for block in blocks {
                    h = block.forward(f, h, rel)?;
                }
                Ok(h)
            }
            (
                Encoder::Text {
                    embed,
                    pos,
                    blocks,
                    norm,
                    max_len,
                },
                SourceInput::Tokens(tokens),
            ) => {
                if tokens.is_empty() {
                    return Err(ModelError::InputTooShort { len: 0, min: 1 });
                }
                if tokens.len() > *max_len {
                    return Err(ModelError::InputTooLong {
                        len: tokens.len(),
                        max: *max_len,
                    });
                }
                self.check_tokens(tokens)?;
                let mut h = embed_with_positions(f, *embed, *pos, tokens)?;
                for block in blocks {
                    h = block.forward(f, h, None, None)?;
                }
                norm.forward(f, h)
            }
            (encoder, src) => Err(ModelError::WrongInputKind {
                encoder: match encoder {
                    Encoder::Speech { .. } => "speech",
                    Encoder::Text { .. } => "text",
                },
                input: src.kind(),
            }),
        }
    }

    /// Decoder logits `[L, K]` for decoder inputs (`<sos>`-prefixed).
    fn decode_logits(&self, f: &mut Forward, memory: Var, inputs: &[TokenId]) -> Result<Var, ModelError> {
        let d = &self.decoder;
        let mut h = embed_with_positions(f, d.embed, d.pos, inputs)?;
        let mask = causal_mask(inputs.len());
        for block in &d.blocks {
            h = block.forward(f, h, Some(memory), Some(&mask))?;
        }
        let h = d.norm.forward(f, h)?;
        d.out.forward(f, h)
    }
}

fn embed_with_positions(f: &mut Forward, embed: ParamId, pos: ParamId, tokens: &[TokenId]) -> Result<Var, ModelError> {
    let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let (e, p) = (f.p(embed), f.p(pos));
    let te = f.tape.gather_rows(e, &ids)?;
    let pe = f.tape.gather_rows(p, &positions)?;
    Ok(f.tape.add(te, pe)?)
}

fn softmax(x: &[f64], out: &mut [f64]) {
    let lse = crate::compute::log_sum_exp(x);
    for (o, v) in out.iter_mut().zip(x) {
        *o = (v - lse).exp();
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
