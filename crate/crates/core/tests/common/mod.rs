#![allow(dead_code)]

pub mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssum_core::compute::{Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-8;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Worst ratio `|analytic − numeric| / max(REL_TOL·max(|a|,|n|), ABS_FLOOR)`
/// over every input element; ≤ 1 means the check passes.
pub fn grad_check<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();

    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + FD_STEP;
            let plus = eval(&work);
            work[i].data_mut()[j] = orig - FD_STEP;
            let minus = eval(&work);
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic.data()[j];
            let allowed = (REL_TOL * a.abs().max(numeric.abs())).max(ABS_FLOOR);
            worst = worst.max((a - numeric).abs() / allowed);
        }
    }
    worst
}

/// Contracts `x` with a fixed random weight so every output element matters.
pub fn project(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let mut r = rng(seed ^ 0x9e37_79b9);
    let w = random_tensor(&mut r, tape.shape(x));
    let wv = tape.constant(w);
    let p = tape.mul(x, wv).unwrap();
    tape.sum(p).unwrap()
}

pub fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.get(&[i, p]) * b.get(&[p, j]);
            }
            out[i * n + j] = s;
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}

/// Direct sliding-window 1-D convolution; weight indexed `[(tap·C_in + c_in), c_out]`.
pub fn naive_conv1d(x: &Tensor, w: &Tensor, kernel: usize, stride: usize, pad: usize) -> Tensor {
    let (t, c_in) = (x.shape()[0], x.shape()[1]);
    let c_out = w.shape()[1];
    let t_out = (t + 2 * pad - kernel) / stride + 1;
    let mut out = vec![0.0; t_out * c_out];
    for o in 0..t_out {
        for co in 0..c_out {
            let mut s = 0.0;
            for j in 0..kernel {
                let pos = (o * stride + j) as isize - pad as isize;
                if pos < 0 || pos >= t as isize {
                    continue;
                }
                for ci in 0..c_in {
                    s += x.get(&[pos as usize, ci]) * w.get(&[j * c_in + ci, co]);
                }
            }
            out[o * c_out + co] = s;
        }
    }
    Tensor::new(vec![t_out, c_out], out).unwrap()
}

/// Direct 2-D convolution on `[H, W, C_in]`; weight indexed `[((a·k + b)·C_in + c_in), c_out]`.
pub fn naive_conv2d(x: &Tensor, w: &Tensor, kernel: usize, stride: usize, pad: usize) -> Tensor {
    let (h, wd, c_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let c_out = w.shape()[1];
    let h_out = (h + 2 * pad - kernel) / stride + 1;
    let w_out = (wd + 2 * pad - kernel) / stride + 1;
    let mut out = vec![0.0; h_out * w_out * c_out];
    for i in 0..h_out {
        for j in 0..w_out {
            for co in 0..c_out {
                let mut s = 0.0;
                for a in 0..kernel {
                    for b in 0..kernel {
                        let y = (i * stride + a) as isize - pad as isize;
                        let z = (j * stride + b) as isize - pad as isize;
                        if y < 0 || z < 0 || y >= h as isize || z >= wd as isize {
                            continue;
                        }
                        for ci in 0..c_in {
                            s += x.get(&[y as usize, z as usize, ci]) * w.get(&[(a * kernel + b) * c_in + ci, co]);
                        }
                    }
                }
                out[(i * w_out + j) * c_out + co] = s;
            }
        }
    }
    Tensor::new(vec![h_out, w_out, c_out], out).unwrap()
}

/// Two-pass layer normalization (mean first, then variance), unit gain, zero bias.
pub fn two_pass_layer_norm(x: &Tensor, eps: f64) -> Tensor {
    let n = x.cols();
    let mut out = Vec::with_capacity(x.len());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        out.extend(row.iter().map(|v| (v - mean) / (var + eps).sqrt()));
    }
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

type Check = Box<dyn Fn(u64) -> f64>;

/// One gradient check per differentiable primitive; each closure takes a
/// seed and returns the worst tolerance ratio from [`grad_check`].
pub fn primitive_gradient_checks() -> Vec<(&'static str, Check)> {
    use ssum_core::compute::{conv1d, conv2d, LAYER_NORM_EPS};
    let mut checks: Vec<(&'static str, Check)> = Vec::new();
    checks.push((
        "add",
        Box::new(|s| {
            let mut r = rng(s);
            let xs = [random_tensor(&mut r, &[3, 4]), random_tensor(&mut r, &[3, 4])];
            grad_check(&xs, |t, v| {
                let y = t.add(v[0], v[1]).unwrap();
                project(t, y, s)
            })
        }),
    ));
    checks.push((
        "sub",
        Box::new(|s| {
            let mut r = rng(s);
            let xs = [random_tensor(&mut r, &[3, 4]), random_tensor(&mut r, &[3, 4])];
            grad_check(&xs, |t, v| {
                let y = t.sub(v[0], v[1]).unwrap();
                project(t, y, s)
            })
        }),
    ));
    checks.push((
        "mul",
        Box::new(|s| {
            let mut r = rng(s);
            let xs = [random_tensor(&mut r, &[3, 4]), random_tensor(&mut r, &[3, 4])];
            grad_check(&xs, |t, v| {
                let y = t.mul(v[0], v[1]).unwrap();
                project(t, y, s)
            })
        }),
    ));
    checks.push((
        "scale",
        Box::new(|s| {
            let mut r = rng(s);
            let xs = [random_tensor(&mut r, &[5])];
            grad_check(&xs, |t, v| {
                let y = t.scale(v[0], -1.7).unwrap();
                project(t, y, s)
            })
        }),
    ));
    checks.push((
        "add_bias",
        Box::new(|s| {
            let mut r = rng(s);
            let xs = [random_tensor(&mut r, &[3, 4]), random_tensor(&mut r, &[4])];
            grad_check(&xs, |t, v| {
                let y = t.add_bias(v[0], v[1]).unwrap();
                project(t, y, s)
            })
        }),
    ));
    checks.push((
        "matmul",
        Box::new(|s| {
            let mut r = rng(s);
            let xs = [random_tensor(&mut r, &[3, 4]), random_tensor(&mut r, &[4, 2])];
            grad_check(&xs, |t, v| {
                let y = t.matmul(v[0], v[1]).unwrap();
                project(t, y, s)
            })
        }),
    ));
    checks.push((
        "matmul_nt",
        Box::new(|s| {
            let mut r = rng(s);
            let xs = [random_tensor(&mut r, &[3, 4]), random_tensor(&mut r, &[5, 4])];
            grad_check(&xs, |t, v| {
                let y = t.matmul_nt(v[0], v[1]).unwrap();
                project(t, y, s)
            })
        }),
    ));
    checks.push((
        "softmax",
        Box::new(|s| {
            let mut r = rng(s);
            let xs = [random_tensor(&mut r, &[3, 5])];
            grad_check(&xs, |t, v| {
                let y = t.softmax(v[0], 1).unwrap();
                project(t, y, s)
            })
        }),
    ));
    checks.push((
        "softmax_axis0",
        Box::new(|s| {
            let mut r = rng(s);
            let xs = [random_tensor(&mut r, &[4, 3])];
            grad_check(&xs, |t, v| {
                let y = t.softmax(v[0], 0).unwrap();
                project(t, y, s)
            })
        }),
    ));
    checks.push((
        "layer_norm",
        Box::new(|s| {
            let mut r = rng(s);
            let xs = [
                random_tensor(&mut r, &[3, 6]),
                random_tensor(&mut r, &[6]),
                random_tensor(&mut r, &[6]),
            ];
            grad_check(&xs, |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS).unwrap();
                project(t, y, s)
            })
        }),
    ));
    checks.push((
        "gelu",
        Box::new(|s| {
            let mut r = rng(s);
            let xs = [random_tensor(&mut r, &[2, 5])];
            grad_check(&xs, |t, v| {
                let y = t.gelu(v[0]).unwrap();
                project(t, y, s)
            })
        }),
    ));
    checks.push((
        "sigmoid",
        Box::new(|s| {
            let mut r = rng(s);
            let xs = [random_tensor(&mut r, &[2, 5])];
            grad_check(&xs, |t, v| {
                let y = t.sigmoid(v[0]).unwrap();
                project(t, y, s)
            })
        }),
    ));
    checks.push((
        "relu",
        Box::new(|s| {
            let mut r = rng(s);
            // keep inputs away from the kink so the finite difference is valid
            let mut x = random_tensor(&mut r, &[2, 5]);
            x.data_mut().iter_mut().for_each(|v| *v += 0.1f64.copysign(*v));
            grad_check(&[x], |t, v| {
                let y = t.relu(v[0]).unwrap();
                project(t, y, s)
            })
        }),
    ));
    checks.push((
        "slice_concat",
        Box::new(|s| {
            let mut r = rng(s);
            let xs = [random_tensor(&mut r, &[3, 6]), random_tensor(&mut r, &[3, 2])];
            grad_check(&xs, |t, v| {
                let a = t.slice_cols(v[0], 1, 4).unwrap();
                let y = t.concat_cols(&[v[1], a]).unwrap();
                project(t, y, s)
            })
        }),
    ));
    checks.push((
        "gather_rows",
        Box::new(|s| {
            let mut r = rng(s);
            let xs = [random_tensor(&mut r, &[5, 3])];
            grad_check(&xs, |t, v| {
                let y = t.gather_rows(v[0], &[4, 0, 4, 2]).unwrap();
                project(t, y, s)
            })
        }),
    ));
    checks.push((
        "rel_gather",
        Box::new(|s| {
            let mut r = rng(s);
            let xs = [random_tensor(&mut r, &[6, 5])];
            grad_check(&xs, |t, v| {
                let y = t.rel_gather(v[0], 2).unwrap();
                project(t, y, s)
            })
        }),
    ));
    checks.push((
        "conv1d",
        Box::new(|s| {
            let mut r = rng(s);
            let xs = [
                random_tensor(&mut r, &[9, 2]),
                random_tensor(&mut r, &[6, 3]),
                random_tensor(&mut r, &[3]),
            ];
            grad_check(&xs, |t, v| {
                let y = conv1d(t, v[0], v[1], Some(v[2]), 3, 2, 1).unwrap();
                project(t, y, s)
            })
        }),
    ));
    checks.push((
        "conv2d",
        Box::new(|s| {
            let mut r = rng(s);
            let xs = [
                random_tensor(&mut r, &[5, 4, 2]),
                random_tensor(&mut r, &[18, 3]),
                random_tensor(&mut r, &[3]),
            ];
            grad_check(&xs, |t, v| {
                let y = conv2d(t, v[0], v[1], Some(v[2]), 3, 2, 1).unwrap();
                project(t, y, s)
            })
        }),
    ));
    checks.push((
        "depthwise_conv1d",
        Box::new(|s| {
            let mut r = rng(s);
            let xs = [random_tensor(&mut r, &[7, 3]), random_tensor(&mut r, &[5, 3])];
            grad_check(&xs, |t, v| {
                let y = t.depthwise_conv1d(v[0], v[1], 2).unwrap();
                project(t, y, s)
            })
        }),
    ));
    checks.push((
        "reshape_mean",
        Box::new(|s| {
            let mut r = rng(s);
            let xs = [random_tensor(&mut r, &[2, 6])];
            grad_check(&xs, |t, v| {
                let y = t.reshape(v[0], &[3, 4]).unwrap();
                let y = t.gelu(y).unwrap();
                t.mean(y).unwrap()
            })
        }),
    ));
    checks.push((
        "ls_cross_entropy",
        Box::new(|s| {
            let mut r = rng(s);
            let xs = [random_tensor(&mut r, &[4, 6])];
            grad_check(&xs, |t, v| {
                t.ls_cross_entropy(v[0], &[Some(1), None, Some(5), Some(0)], 0.1)
                    .unwrap()
            })
        }),
    ));
    checks
}

use ssum_core::model::{
    DecoderConfig, ModelConfig, Seq2SeqModel, SourceInput, SpeechEncoderConfig, TextEncoderConfig, TokenId, Vocabulary,
    EOS,
};

pub fn tiny_vocab(words: usize) -> Vocabulary {
    Vocabulary::new((0..words).map(|i| format!("w{i}"))).unwrap()
}

/// d=8, 2 Conformer + 2 decoder layers.
pub fn tiny_speech_config(vocab: usize) -> ModelConfig {
    ModelConfig::speech(
        SpeechEncoderConfig {
            feature_dim: 6,
            subsample_rate: 4,
            conv_layers: 2,
            conv_channels: 2,
            layers: 2,
            dim: 8,
            heads: 2,
            ff_dim: 12,
            conv_kernel: 3,
            rel_clip: 3,
        },
        tiny_decoder(),
        vocab,
    )
}

pub fn tiny_decoder() -> DecoderConfig {
    DecoderConfig {
        layers: 2,
        dim: 8,
        heads: 2,
        ff_dim: 12,
        max_len: 12,
    }
}

pub fn tiny_text_config(vocab: usize) -> ModelConfig {
    ModelConfig::text(
        TextEncoderConfig {
            layers: 2,
            dim: 8,
            heads: 2,
            ff_dim: 12,
            max_len: 12,
        },
        tiny_decoder(),
        vocab,
    )
}

pub fn random_targets(rng: &mut ChaCha8Rng, len: usize, vocab: usize) -> Vec<TokenId> {
    let mut t: Vec<TokenId> = (0..len - 1).map(|_| rng.gen_range(4..vocab as TokenId)).collect();
    t.push(EOS);
    t
}

/// Central-difference check of the label-smoothed loss with respect to every
/// model parameter. Returns the worst tolerance ratio.
pub fn model_grad_check(model: &Seq2SeqModel, src: SourceInput, targets: &[TokenId], eps: f64) -> f64 {
    let signal = model.loss_and_gradients(src, targets, eps).unwrap();
    let mut analytic: Vec<Tensor> = model.params().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
    for (id, g) in signal.gradients {
        analytic[id.index()] = g;
    }
    let mut work = model.clone();
    let ids: Vec<_> = model.params().ids().collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        for j in 0..model.params().get(id).len() {
            let orig = model.params().get(id).data()[j];
            work.params_mut().get_mut(id).data_mut()[j] = orig + FD_STEP;
            let plus = work.loss(src, targets, eps).unwrap().0;
            work.params_mut().get_mut(id).data_mut()[j] = orig - FD_STEP;
            let minus = work.loss(src, targets, eps).unwrap().0;
            work.params_mut().get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[id.index()].data()[j];
            let allowed = (REL_TOL * a.abs().max(numeric.abs())).max(ABS_FLOOR);
            worst = worst.max((a - numeric).abs() / allowed);
        }
    }
    worst
}

/// Moves every parameter to a generic point (non-zero biases, non-unit gains)
/// so the check does not sit on the degenerate initialization.
pub fn jitter(model: &mut Seq2SeqModel, seed: u64) {
    let mut r = rng(seed ^ 0x5eed);
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        for v in model.params_mut().get_mut(id).data_mut() {
            *v += r.gen_range(-0.1..0.1);
        }
    }
}
