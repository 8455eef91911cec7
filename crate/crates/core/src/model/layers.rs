use crate::compute::{conv2d, Tape, Tensor, Var, LAYER_NORM_EPS};

use super::params::{Builder, ParamId, ParamStore};
use super::ModelError;

/// Additive mask value for disallowed attention links; `exp` of it underflows to 0.
const MASKED: f64 = -1e9;

/// One forward evaluation: a tape plus lazily bound parameters.
pub(crate) struct Forward<'m> {
    pub tape: Tape,
    params: &'m ParamStore,
    bound: Vec<Option<Var>>,
    track: bool,
}

impl<'m> Forward<'m> {
    pub fn new(params: &'m ParamStore, track: bool) -> Self {
        Self {
            tape: Tape::new(),
            params,
            bound: vec![None; params.len()],
            track,
        }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let t = self.params.get(id).clone();
        let v = if self.track {
            self.tape.leaf(t)
        } else {
            self.tape.constant(t)
        };
        self.bound[id.0] = Some(v);
        v
    }

    /// Parameters that took part in this evaluation.
    pub fn bound(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn build(b: &mut Builder, name: &str, fan_in: usize, fan_out: usize) -> Result<Self, ModelError> {
        b.scope(name, |b| {
            Ok(Self {
                w: b.xavier("weight", fan_in, fan_out)?,
                b: b.zeros("bias", fan_out)?,
            })
        })
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var, ModelError> {
        let (w, b) = (f.p(self.w), f.p(self.b));
        let y = f.tape.matmul(x, w)?;
        Ok(f.tape.add_bias(y, b)?)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    pub fn build(b: &mut Builder, name: &str, dim: usize) -> Result<Self, ModelError> {
        b.scope(name, |b| {
            Ok(Self {
                gain: b.ones("gain", dim)?,
                bias: b.zeros("bias", dim)?,
            })
        })
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var, ModelError> {
        let (g, b) = (f.p(self.gain), f.p(self.bias));
        Ok(f.tape.layer_norm(x, g, b, LAYER_NORM_EPS)?)
    }
}

/// Pre-norm position-wise feed-forward: `W2 · GELU(W1 · LN(x))`. Residual is added by the caller.
#[derive(Clone, Debug)]
pub(crate) struct FeedForward {
    norm: LayerNorm,
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn build(b: &mut Builder, name: &str, dim: usize, hidden: usize) -> Result<Self, ModelError> {
        b.scope(name, |b| {
            Ok(Self {
                norm: LayerNorm::build(b, "norm", dim)?,
                up: Linear::build(b, "up", dim, hidden)?,
                down: Linear::build(b, "down", hidden, dim)?,
            })
        })
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var, ModelError> {
        let h = self.norm.forward(f, x)?;
        let h = self.up.forward(f, h)?;
        let h = f.tape.gelu(h)?;
        self.down.forward(f, h)
    }
}

/// Multi-head scaled dot-product attention with optional relative-position scores.
#[derive(Clone, Debug)]
pub(crate) struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
    dim: usize,
}

/// Relative-position term: a shared `[2·clip + 1, head_dim]` table.
#[derive(Clone, Copy)]
pub(crate) struct RelativePositions {
    pub table: ParamId,
    pub clip: usize,
}

impl Attention {
    pub fn build(b: &mut Builder, name: &str, dim: usize, heads: usize) -> Result<Self, ModelError> {
        b.scope(name, |b| {
            Ok(Self {
                q: Linear::build(b, "q", dim, dim)?,
                k: Linear::build(b, "k", dim, dim)?,
                v: Linear::build(b, "v", dim, dim)?,
                out: Linear::build(b, "out", dim, dim)?,
                heads,
                dim,
            })
        })
    }

    /// `query` is `[T, d]`, `memory` is `[S, d]`; `mask` is `[T, S]` additive.
    pub fn forward(
        &self,
        f: &mut Forward,
        query: Var,
        memory: Var,
        mask: Option<&Tensor>,
        rel: Option<RelativePositions>,
    ) -> Result<Var, ModelError> {
        let q = self.q.forward(f, query)?;
        let k = self.k.forward(f, memory)?;
        let v = self.v.forward(f, memory)?;
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let rel = match rel {
            Some(r) => {
                // Only distances up to T−1 can occur, so gather just that band of the table.
                let t = f.tape.shape(query)[0];
                let clip = r.clip.min(t.saturating_sub(1));
                let table = f.p(r.table);
                let rows: Vec<usize> = (r.clip - clip..=r.clip + clip).collect();
                Some((f.tape.gather_rows(table, &rows)?, clip))
            }
            None => None,
        };
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = f.tape.slice_cols(q, lo, hi)?;
            let kh = f.tape.slice_cols(k, lo, hi)?;
            let vh = f.tape.slice_cols(v, lo, hi)?;
            let mut s = f.tape.matmul_nt(qh, kh)?;
            if let Some((band, clip)) = rel {
                let per_distance = f.tape.matmul_nt(qh, band)?;
                let pos = f.tape.rel_gather(per_distance, clip)?;
                s = f.tape.add(s, pos)?;
            }
            s = f.tape.scale(s, scale)?;
            if let Some(m) = mask {
                s = f.tape.add_const(s, m)?;
            }
            let p = f.tape.softmax_rows(s)?;
            outs.push(f.tape.matmul(p, vh)?);
        }
        let joined = if outs.len() == 1 {
            outs[0]
        } else {
            f.tape.concat_cols(&outs)?
        };
        self.out.forward(f, joined)
    }
}

/// `[L, L]` mask blocking attention to later positions.
pub(crate) fn causal_mask(len: usize) -> Tensor {
    let mut m = Tensor::zeros(&[len, len]);
    for i in 0..len {
        for j in i + 1..len {
            m.data_mut()[i * len + j] = MASKED;
        }
    }
    m
}

/// Conformer convolution module with layer norm in place of batch norm:
/// LN → pointwise(d→2d) → GLU → depthwise(k) → LN → SiLU → pointwise(d→d).
#[derive(Clone, Debug)]
pub(crate) struct ConvModule {
    norm: LayerNorm,
    pointwise_in: Linear,
    depthwise: ParamId,
    depthwise_bias: ParamId,
    mid_norm: LayerNorm,
    pointwise_out: Linear,
    kernel: usize,
    dim: usize,
}

impl ConvModule {
    pub fn build(b: &mut Builder, name: &str, dim: usize, kernel: usize) -> Result<Self, ModelError> {
        b.scope(name, |b| {
            Ok(Self {
                norm: LayerNorm::build(b, "norm", dim)?,
                pointwise_in: Linear::build(b, "pointwise_in", dim, 2 * dim)?,
                depthwise: b.xavier("depthwise.weight", kernel, dim)?,
                depthwise_bias: b.zeros("depthwise.bias", dim)?,
                mid_norm: LayerNorm::build(b, "mid_norm", dim)?,
                pointwise_out: Linear::build(b, "pointwise_out", dim, dim)?,
                kernel,
                dim,
            })
        })
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var, ModelError> {
        let h = self.norm.forward(f, x)?;
        let h = self.pointwise_in.forward(f, h)?;
        let a = f.tape.slice_cols(h, 0, self.dim)?;
        let gate = f.tape.slice_cols(h, self.dim, 2 * self.dim)?;
        let gate = f.tape.sigmoid(gate)?;
        let h = f.tape.mul(a, gate)?;
        let (w, bias) = (f.p(self.depthwise), f.p(self.depthwise_bias));
        let h = f.tape.depthwise_conv1d(h, w, (self.kernel - 1) / 2)?;
        let h = f.tape.add_bias(h, bias)?;
        let h = self.mid_norm.forward(f, h)?;
        let s = f.tape.sigmoid(h)?;
        let h = f.tape.mul(h, s)?;
        self.pointwise_out.forward(f, h)
    }
}

/// Macaron Conformer block: ½FF → rel-pos MHSA → conv → ½FF → LN.
#[derive(Clone, Debug)]
pub(crate) struct ConformerBlock {
    ff1: FeedForward,
    attn_norm: LayerNorm,
    attn: Attention,
    conv: ConvModule,
    ff2: FeedForward,
    norm: LayerNorm,
}

impl ConformerBlock {
    pub fn build(
        b: &mut Builder,
        name: &str,
        dim: usize,
        heads: usize,
        ff: usize,
        kernel: usize,
    ) -> Result<Self, ModelError> {
        b.scope(name, |b| {
            Ok(Self {
                ff1: FeedForward::build(b, "ff1", dim, ff)?,
                attn_norm: LayerNorm::build(b, "attn_norm", dim)?,
                attn: Attention::build(b, "attn", dim, heads)?,
                conv: ConvModule::build(b, "conv", dim, kernel)?,
                ff2: FeedForward::build(b, "ff2", dim, ff)?,
                norm: LayerNorm::build(b, "norm", dim)?,
            })
        })
    }

    pub fn forward(&self, f: &mut Forward, x: Var, rel: RelativePositions) -> Result<Var, ModelError> {
        let h = self.ff1.forward(f, x)?;
        let h = f.tape.scale(h, 0.5)?;
        let x = f.tape.add(x, h)?;
        let n = self.attn_norm.forward(f, x)?;
        let h = self.attn.forward(f, n, n, None, Some(rel))?;
        let x = f.tape.add(x, h)?;
        let h = self.conv.forward(f, x)?;
        let x = f.tape.add(x, h)?;
        let h = self.ff2.forward(f, x)?;
        let h = f.tape.scale(h, 0.5)?;
        let x = f.tape.add(x, h)?;
        self.norm.forward(f, x)
    }
}

/// Pre-norm Transformer block; with `cross` it is a decoder block.
#[derive(Clone, Debug)]
pub(crate) struct TransformerBlock {
    self_norm: LayerNorm,
    self_attn: Attention,
    cross: Option<(LayerNorm, Attention)>,
    ff: FeedForward,
}

impl TransformerBlock {
    pub fn build(
        b: &mut Builder,
        name: &str,
        dim: usize,
        heads: usize,
        ff: usize,
        cross: bool,
    ) -> Result<Self, ModelError> {
        b.scope(name, |b| {
            let self_norm = LayerNorm::build(b, "self_norm", dim)?;
            let self_attn = Attention::build(b, "self_attn", dim, heads)?;
            let cross = if cross {
                Some((
                    LayerNorm::build(b, "cross_norm", dim)?,
                    Attention::build(b, "cross_attn", dim, heads)?,
                ))
            } else {
                None
            };
            Ok(Self {
                self_norm,
                self_attn,
                cross,
                ff: FeedForward::build(b, "ff", dim, ff)?,
            })
        })
    }

    pub fn forward(
        &self,
        f: &mut Forward,
        x: Var,
        memory: Option<Var>,
        mask: Option<&Tensor>,
    ) -> Result<Var, ModelError> {
        let n = self.self_norm.forward(f, x)?;
        let h = self.self_attn.forward(f, n, n, mask, None)?;
        let mut x = f.tape.add(x, h)?;
        if let (Some((norm, attn)), Some(mem)) = (&self.cross, memory) {
            let n = norm.forward(f, x)?;
            let h = attn.forward(f, n, mem, None, None)?;
            x = f.tape.add(x, h)?;
        }
        let h = self.ff.forward(f, x)?;
        Ok(f.tape.add(x, h)?)
    }
}

/// Stack of 3×3 conv2d + ReLU layers over `[T, F, 1]`, flattened and projected to `dim`.
#[derive(Clone, Debug)]
pub(crate) struct Subsampling {
    convs: Vec<(ParamId, ParamId, usize)>,
    proj: Linear,
}

impl Subsampling {
    pub fn build(
        b: &mut Builder,
        name: &str,
        layers: usize,
        strided: usize,
        channels: usize,
        reduced_freq: usize,
        dim: usize,
    ) -> Result<Self, ModelError> {
        b.scope(name, |b| {
            let mut convs = Vec::with_capacity(layers);
            for i in 0..layers {
                let c_in = if i == 0 { 1 } else { channels };
                let stride = if i < strided { 2 } else { 1 };
                let w = b.xavier(&format!("conv{i}.weight"), 9 * c_in, channels)?;
                let bias = b.zeros(&format!("conv{i}.bias"), channels)?;
                convs.push((w, bias, stride));
            }
            let proj = Linear::build(b, "proj", channels * reduced_freq, dim)?;
            Ok(Self { convs, proj })
        })
    }

    pub fn forward(&self, f: &mut Forward, features: Var) -> Result<Var, ModelError> {
        let (t, freq) = (f.tape.shape(features)[0], f.tape.shape(features)[1]);
        let mut x = f.tape.reshape(features, &[t, freq, 1])?;
        for &(w, b, stride) in &self.convs {
            let (wv, bv) = (f.p(w), f.p(b));
            x = conv2d(&mut f.tape, x, wv, Some(bv), 3, stride, 1)?;
            x = f.tape.relu(x)?;
        }
        let s = f.tape.shape(x).to_vec();
        let flat = f.tape.reshape(x, &[s[0], s[1] * s[2]])?;
        self.proj.forward(f, flat)
    }
}
