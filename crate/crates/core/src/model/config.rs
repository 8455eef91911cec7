use serde::{Deserialize, Serialize};

use super::ModelError;

/// Conv2d sub-sampling front end followed by Conformer blocks.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpeechEncoderConfig {
    pub feature_dim: usize,
    /// Overall time reduction; must be a power of two.
    pub subsample_rate: usize,
    /// Number of 3×3 conv layers; the first `log2(subsample_rate)` use stride 2.
    pub conv_layers: usize,
    pub conv_channels: usize,
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub conv_kernel: usize,
    /// Relative distances are clipped to `±rel_clip`.
    pub rel_clip: usize,
}

/// Token embedding + learned positions followed by Transformer blocks.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TextEncoderConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderConfig {
    Speech(SpeechEncoderConfig),
    Text(TextEncoderConfig),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    /// Size of the learned position table; bounds every decoded sequence.
    pub max_len: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub vocab_size: usize,
}

impl EncoderConfig {
    pub fn dim(&self) -> usize {
        match self {
            EncoderConfig::Speech(c) => c.dim,
            EncoderConfig::Text(c) => c.dim,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EncoderConfig::Speech(_) => "speech",
            EncoderConfig::Text(_) => "text",
        }
    }
}

impl SpeechEncoderConfig {
    /// Number of stride-2 conv layers.
    pub fn strided_layers(&self) -> usize {
        self.subsample_rate.trailing_zeros() as usize
    }

    /// Frequency bins left after the strided convolutions.
    pub fn reduced_feature_dim(&self) -> usize {
        (0..self.strided_layers()).fold(self.feature_dim, |f, _| f.div_ceil(2))
    }

    /// Encoder output length for `frames` input frames: `⌈frames / r⌉`.
    pub fn output_len(&self, frames: usize) -> usize {
        (0..self.strided_layers()).fold(frames, |t, _| t.div_ceil(2))
    }

    /// Desk-scale defaults used throughout the experiments.
    pub fn toy() -> Self {
        Self {
            feature_dim: 16,
            subsample_rate: 4,
            conv_layers: 2,
            conv_channels: 8,
            layers: 2,
            dim: 32,
            heads: 4,
            ff_dim: 64,
            conv_kernel: 7,
            rel_clip: 64,
        }
    }

    /// The published speech encoder: 43-dim input (40 fbank + 3 pitch),
    /// 4 conv layers with overall rate 4, 12 Conformer blocks of width 768.
    pub fn full_scale() -> Self {
        Self {
            feature_dim: 43,
            subsample_rate: 4,
            conv_layers: 4,
            conv_channels: 768,
            layers: 12,
            dim: 768,
            heads: 8,
            ff_dim: 2048,
            conv_kernel: 31,
            rel_clip: 160,
        }
    }
}

impl TextEncoderConfig {
    pub fn toy() -> Self {
        Self {
            layers: 2,
            dim: 32,
            heads: 4,
            ff_dim: 64,
            max_len: 64,
        }
    }

    pub fn full_scale() -> Self {
        Self {
            layers: 6,
            dim: 768,
            heads: 12,
            ff_dim: 3072,
            max_len: 1024,
        }
    }
}

impl DecoderConfig {
    pub fn toy() -> Self {
        Self {
            layers: 2,
            dim: 32,
            heads: 4,
            ff_dim: 64,
            max_len: 64,
        }
    }

    pub fn full_scale() -> Self {
        Self {
            layers: 6,
            dim: 768,
            heads: 12,
            ff_dim: 3072,
            max_len: 1024,
        }
    }
}

/// BPE vocabulary size of the published LM; documentation only.
pub const FULL_VOCAB_SIZE: usize = 50_265;

impl ModelConfig {
    pub fn speech(encoder: SpeechEncoderConfig, decoder: DecoderConfig, vocab_size: usize) -> Self {
        Self {
            encoder: EncoderConfig::Speech(encoder),
            decoder,
            vocab_size,
        }
    }

    pub fn text(encoder: TextEncoderConfig, decoder: DecoderConfig, vocab_size: usize) -> Self {
        Self {
            encoder: EncoderConfig::Text(encoder),
            decoder,
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.vocab_size < 4 {
            return bad(format!(
                "vocabulary of {} cannot hold the 4 reserved tokens",
                self.vocab_size
            ));
        }
        let d = &self.decoder;
        check_block("decoder", d.dim, d.heads, d.layers)?;
        if d.max_len == 0 {
            return bad("decoder max_len must be at least 1".into());
        }
        match &self.encoder {
            EncoderConfig::Speech(e) => {
                check_block("speech encoder", e.dim, e.heads, e.layers)?;
                if e.subsample_rate == 0 || !e.subsample_rate.is_power_of_two() {
                    return bad(format!("subsample rate {} is not a power of two", e.subsample_rate));
                }
                if e.conv_layers < e.strided_layers() || e.conv_layers == 0 {
                    return bad(format!(
                        "{} conv layers cannot reach subsample rate {}",
                        e.conv_layers, e.subsample_rate
                    ));
                }
                if e.conv_kernel % 2 == 0 {
                    return bad(format!("conv kernel {} must be odd", e.conv_kernel));
                }
                if e.feature_dim == 0 || e.conv_channels == 0 {
                    return bad("feature dim and conv channels must be positive".into());
                }
            }
            EncoderConfig::Text(e) => {
                check_block("text encoder", e.dim, e.heads, e.layers)?;
                if e.max_len == 0 {
                    return bad("text encoder max_len must be at least 1".into());
                }
            }
        }
        if self.encoder.dim() != d.dim {
            return bad(format!(
                "encoder width {} differs from decoder width {}",
                self.encoder.dim(),
                d.dim
            ));
        }
        Ok(())
    }
}

fn check_block(what: &str, dim: usize, heads: usize, layers: usize) -> Result<(), ModelError> {
    if heads == 0 || dim == 0 || !dim.is_multiple_of(heads) {
        return Err(ModelError::InvalidConfig(format!(
            "{what}: width {dim} not divisible by {heads} heads"
        )));
    }
    if layers == 0 {
        return Err(ModelError::InvalidConfig(format!("{what}: needs at least one layer")));
    }
    Ok(())
}
