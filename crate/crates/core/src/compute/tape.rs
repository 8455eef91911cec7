//! Reverse-mode differentiation tape.
//!
//! Every primitive evaluates eagerly, stores its output on the tape, and
//! remembers enough to run its vector-Jacobian product later. Node ids grow
//! monotonically, so the tape is topologically ordered by construction and
//! the backward pass is a single reverse sweep.

use super::kernels::{self, gemm, gemm_nt, gemm_tn};
use super::{ComputeError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    AddBias(Var, Var),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Softmax {
        x: Var,
        outer: usize,
        n: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Sigmoid(Var),
    Relu(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    RelGather {
        x: Var,
        clip: usize,
    },
    Im2Col1d {
        x: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Im2Col2d {
        x: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    DepthwiseConv1d {
        x: Var,
        w: Var,
        pad: usize,
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    LsCrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        eps: f64,
        probs: Vec<f64>,
        count: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
///
/// Only leaves keep their gradient; intermediate gradients are released
/// as soon as they have been propagated.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, detail: String) -> ComputeError {
    ComputeError::ShapeMismatch { op, detail }
}

fn as_matrix(t: &Tensor, op: &'static str) -> Result<(usize, usize), ComputeError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(mismatch(op, format!("expected a matrix, got shape {s:?}"))),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Records an untracked input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    /// Records a leaf whose gradient will be reported by `backward`.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var, ComputeError> {
        if !value.is_finite() {
            return Err(ComputeError::NonFinite { op: op_name });
        }
        let needs_grad = self.inputs(&op).iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_raw(value, op, needs_grad))
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) => vec![*a, *b],
            Op::MatMul(a, b) | Op::MatMulNt(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::AddConst(x)
            | Op::Gelu(x)
            | Op::Sigmoid(x)
            | Op::Relu(x)
            | Op::Reshape(x)
            | Op::Sum(x)
            | Op::Mean(x) => vec![*x],
            Op::Softmax { x, .. }
            | Op::SliceCols { x, .. }
            | Op::RelGather { x, .. }
            | Op::Im2Col1d { x, .. }
            | Op::Im2Col2d { x, .. } => vec![*x],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::ConcatCols(xs) => xs.clone(),
            Op::GatherRows { table, .. } => vec![*table],
            Op::DepthwiseConv1d { x, w, .. } => vec![*x, *w],
            Op::LsCrossEntropy { logits, .. } => vec![*logits],
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), ComputeError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::from_parts(va.shape().to_vec(), data)
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(x);
        Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|&a| f(a)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        self.push("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        self.push("sub", out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        self.push("mul", out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, ComputeError> {
        let out = self.map(x, |a| a * c);
        self.push("scale", out, Op::Scale(x, c))
    }

    /// Adds an untracked tensor of the same shape (attention masks).
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var, ComputeError> {
        if self.shape(x) != c.shape() {
            return Err(mismatch("add_const", format!("{:?} vs {:?}", self.shape(x), c.shape())));
        }
        let v = self.value(x);
        let data = v.data().iter().zip(c.data()).map(|(a, b)| a + b).collect();
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        self.push("add_const", out, Op::AddConst(x))
    }

    /// `x[m×n] + bias[n]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, ComputeError> {
        let n = self.value(x).cols();
        if self.shape(bias) != [n] {
            return Err(mismatch(
                "add_bias",
                format!("{:?} + {:?}", self.shape(x), self.shape(bias)),
            ));
        }
        let v = self.value(x);
        let b = self.value(bias).data();
        let mut data = v.data().to_vec();
        for row in data.chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        self.push("add_bias", out, Op::AddBias(x, bias))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        let (m, k) = as_matrix(self.value(a), "matmul")?;
        let (k2, n) = as_matrix(self.value(b), "matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", format!("[{m}x{k}] · [{k2}x{n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        let (m, k) = as_matrix(self.value(a), "matmul_nt")?;
        let (n, k2) = as_matrix(self.value(b), "matmul_nt")?;
        if k != k2 {
            return Err(mismatch("matmul_nt", format!("[{m}x{k}] · [{n}x{k2}]ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push("matmul_nt", Tensor::from_parts(vec![m, n], out), Op::MatMulNt(a, b))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, ComputeError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len().max(1) || shape.get(axis).copied().unwrap_or(0) == 0 {
            return Err(mismatch("softmax", format!("axis {axis} of shape {shape:?}")));
        }
        let n = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        let mut buf_in = vec![0.0; n];
        let mut buf_out = vec![0.0; n];
        for o in 0..outer {
            for i in 0..inner {
                for k in 0..n {
                    buf_in[k] = src[(o * n + k) * inner + i];
                }
                kernels::softmax_into(&buf_in, &mut buf_out);
                for k in 0..n {
                    out[(o * n + k) * inner + i] = buf_out[k];
                }
            }
        }
        self.push(
            "softmax",
            Tensor::from_parts(shape, out),
            Op::Softmax { x, outer, n, inner },
        )
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, ComputeError> {
        let axis = self.shape(x).len().saturating_sub(1);
        self.softmax(x, axis)
    }

    /// Layer normalization over the last axis with affine `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, ComputeError> {
        let n = self.value(x).cols();
        if n == 0 {
            return Err(mismatch("layer_norm", "empty normalized axis".into()));
        }
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(mismatch(
                "layer_norm",
                format!(
                    "x {:?}, gain {:?}, bias {:?}",
                    self.shape(x),
                    self.shape(gain),
                    self.shape(bias)
                ),
            ));
        }
        let v = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = v.rows();
        let mut xhat = vec![0.0; v.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; v.len()];
        for r in 0..rows {
            let row = v.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for k in 0..n {
                let h = (row[k] - mean) * rs;
                xhat[r * n + k] = h;
                out[r * n + k] = h * g[k] + b[k];
            }
        }
        let shape = v.shape().to_vec();
        self.push(
            "layer_norm",
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var, ComputeError> {
        let out = self.map(x, kernels::gelu);
        self.push("gelu", out, Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, ComputeError> {
        let out = self.map(x, kernels::sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, ComputeError> {
        let out = self.map(x, |a| a.max(0.0));
        self.push("relu", out, Op::Relu(x))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, ComputeError> {
        let (m, n) = as_matrix(self.value(x), "slice_cols")?;
        if start >= end || end > n {
            return Err(mismatch("slice_cols", format!("{start}..{end} of {n} columns")));
        }
        let w = end - start;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * w);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + end]);
        }
        self.push(
            "slice_cols",
            Tensor::from_parts(vec![m, w], out),
            Op::SliceCols { x, start },
        )
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var, ComputeError> {
        let first = xs.first().ok_or_else(|| mismatch("concat_cols", "no inputs".into()))?;
        let (m, _) = as_matrix(self.value(*first), "concat_cols")?;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (mi, ni) = as_matrix(self.value(x), "concat_cols")?;
            if mi != m {
                return Err(mismatch("concat_cols", format!("row counts {m} vs {mi}")));
            }
            widths.push(ni);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        self.push(
            "concat_cols",
            Tensor::from_parts(vec![m, total], out),
            Op::ConcatCols(xs.to_vec()),
        )
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, ComputeError> {
        let (v, d) = as_matrix(self.value(table), "gather_rows")?;
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(ComputeError::IndexOutOfRange { index: id, len: v });
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        self.push(
            "gather_rows",
            Tensor::from_parts(vec![ids.len(), d], out),
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Expands per-distance scores `[T, 2c+1]` into `[T, T]` where entry
    /// `(i, j)` reads distance `clamp(j - i, -c, c)`.
    pub fn rel_gather(&mut self, x: Var, clip: usize) -> Result<Var, ComputeError> {
        let (t, w) = as_matrix(self.value(x), "rel_gather")?;
        if w != 2 * clip + 1 {
            return Err(mismatch("rel_gather", format!("width {w} for clip {clip}")));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; t * t];
        for i in 0..t {
            for j in 0..t {
                out[i * t + j] = src[i * w + rel_index(i, j, clip)];
            }
        }
        self.push(
            "rel_gather",
            Tensor::from_parts(vec![t, t], out),
            Op::RelGather { x, clip },
        )
    }

    /// Unfolds `[T, C]` into sliding windows `[T_out, kernel·C]`.
    pub fn im2col_1d(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var, ComputeError> {
        let (t, c) = as_matrix(self.value(x), "im2col_1d")?;
        let t_out = conv_out_len(t, kernel, stride, pad)?;
        let src = self.value(x).data();
        let width = kernel * c;
        let mut out = vec![0.0; t_out * width];
        for o in 0..t_out {
            for j in 0..kernel {
                let pos = (o * stride + j) as isize - pad as isize;
                if pos < 0 || pos as usize >= t {
                    continue;
                }
                let p = pos as usize;
                out[o * width + j * c..o * width + (j + 1) * c].copy_from_slice(&src[p * c..(p + 1) * c]);
            }
        }
        self.push(
            "im2col_1d",
            Tensor::from_parts(vec![t_out, width], out),
            Op::Im2Col1d { x, kernel, stride, pad },
        )
    }

    /// Unfolds channels-last `[H, W, C]` into `[H_out·W_out, k·k·C]`.
    pub fn im2col_2d(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var, ComputeError> {
        let (h, w, c) = match self.shape(x) {
            [h, w, c] => (*h, *w, *c),
            s => return Err(mismatch("im2col_2d", format!("expected [H, W, C], got {s:?}"))),
        };
        let h_out = conv_out_len(h, kernel, stride, pad)?;
        let w_out = conv_out_len(w, kernel, stride, pad)?;
        let src = self.value(x).data();
        let width = kernel * kernel * c;
        let mut out = vec![0.0; h_out * w_out * width];
        for i in 0..h_out {
            for j in 0..w_out {
                let row = (i * w_out + j) * width;
                for a in 0..kernel {
                    let y = (i * stride + a) as isize - pad as isize;
                    if y < 0 || y as usize >= h {
                        continue;
                    }
                    for b in 0..kernel {
                        let z = (j * stride + b) as isize - pad as isize;
                        if z < 0 || z as usize >= w {
                            continue;
                        }
                        let s = (y as usize * w + z as usize) * c;
                        let d = row + (a * kernel + b) * c;
                        out[d..d + c].copy_from_slice(&src[s..s + c]);
                    }
                }
            }
        }
        self.push(
            "im2col_2d",
            Tensor::from_parts(vec![h_out * w_out, width], out),
            Op::Im2Col2d { x, kernel, stride, pad },
        )
    }

    /// Per-channel convolution of `[T, C]` with `w: [k, C]`, stride 1.
    pub fn depthwise_conv1d(&mut self, x: Var, w: Var, pad: usize) -> Result<Var, ComputeError> {
        let (t, c) = as_matrix(self.value(x), "depthwise_conv1d")?;
        let (k, c2) = as_matrix(self.value(w), "depthwise_conv1d")?;
        if c != c2 {
            return Err(mismatch("depthwise_conv1d", format!("{c} channels vs kernel for {c2}")));
        }
        let t_out = conv_out_len(t, k, 1, pad)?;
        let src = self.value(x).data();
        let ker = self.value(w).data();
        let mut out = vec![0.0; t_out * c];
        for o in 0..t_out {
            let dst = &mut out[o * c..(o + 1) * c];
            for j in 0..k {
                let pos = (o + j) as isize - pad as isize;
                if pos < 0 || pos as usize >= t {
                    continue;
                }
                let p = pos as usize;
                let xr = &src[p * c..(p + 1) * c];
                let kr = &ker[j * c..(j + 1) * c];
                for ((d, xv), kv) in dst.iter_mut().zip(xr).zip(kr) {
                    *d += xv * kv;
                }
            }
        }
        self.push(
            "depthwise_conv1d",
            Tensor::from_parts(vec![t_out, c], out),
            Op::DepthwiseConv1d { x, w, pad },
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, ComputeError> {
        let out = self.value(x).clone().reshaped(shape.to_vec())?;
        self.push("reshape", out, Op::Reshape(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, ComputeError> {
        let s = self.value(x).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, ComputeError> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(mismatch("mean", "empty tensor".into()));
        }
        let s = v.sum() / v.len() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(x))
    }

    /// Label-smoothed cross-entropy computed from raw logits `[L, K]`.
    ///
    /// Rows whose target is `None` (padding) are excluded from both the sum
    /// and the normalizer.
    pub fn ls_cross_entropy(&mut self, logits: Var, targets: &[Option<usize>], eps: f64) -> Result<Var, ComputeError> {
        let (l, k) = as_matrix(self.value(logits), "ls_cross_entropy")?;
        if targets.len() != l {
            return Err(mismatch(
                "ls_cross_entropy",
                format!("{l} rows, {} targets", targets.len()),
            ));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(mismatch("ls_cross_entropy", "no non-padding targets".into()));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; l * k];
        let mut total = 0.0;
        for (r, target) in targets.iter().enumerate() {
            let row = &src[r * k..(r + 1) * k];
            kernels::softmax_into(row, &mut probs[r * k..(r + 1) * k]);
            let Some(y) = *target else { continue };
            if y >= k {
                return Err(ComputeError::IndexOutOfRange { index: y, len: k });
            }
            let lse = kernels::log_sum_exp(row);
            let mut row_loss = 0.0;
            for (c, &z) in row.iter().enumerate() {
                let w = eps / k as f64 + if c == y { 1.0 - eps } else { 0.0 };
                row_loss -= w * (z - lse);
            }
            total += row_loss;
        }
        let loss = total / count as f64;
        self.push(
            "ls_cross_entropy",
            Tensor::scalar(loss),
            Op::LsCrossEntropy {
                logits,
                targets: targets.to_vec(),
                eps,
                probs,
                count,
            },
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, ComputeError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(ComputeError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (&node.op, g) {
                (Op::Leaf, Some(g)) if node.needs_grad => Some(Tensor::from_parts(node.value.shape().to_vec(), g)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(grads, *a, |d| axpy(d, g, 1.0));
                self.accum(grads, *b, |d| axpy(d, g, 1.0));
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, |d| axpy(d, g, 1.0));
                self.accum(grads, *b, |d| axpy(d, g, -1.0));
            }
            Op::Mul(a, b) => {
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                self.accum(grads, *a, |d| {
                    for ((d, gv), bv) in d.iter_mut().zip(g).zip(vb) {
                        *d += gv * bv;
                    }
                });
                self.accum(grads, *b, |d| {
                    for ((d, gv), av) in d.iter_mut().zip(g).zip(va) {
                        *d += gv * av;
                    }
                });
            }
            Op::Scale(x, c) => self.accum(grads, *x, |d| axpy(d, g, *c)),
            Op::AddConst(x) | Op::Reshape(x) => self.accum(grads, *x, |d| axpy(d, g, 1.0)),
            Op::AddBias(x, bias) => {
                self.accum(grads, *x, |d| axpy(d, g, 1.0));
                let n = self.value(*bias).len();
                self.accum(grads, *bias, |d| {
                    for row in g.chunks(n) {
                        axpy(d, row, 1.0);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                self.accum(grads, *a, |d| gemm_nt(g, vb.data(), d, m, n, k));
                self.accum(grads, *b, |d| gemm_tn(va.data(), g, d, k, m, n));
            }
            Op::MatMulNt(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[0];
                self.accum(grads, *a, |d| gemm(g, vb.data(), d, m, n, k));
                self.accum(grads, *b, |d| gemm_tn(g, va.data(), d, n, m, k));
            }
            Op::Softmax { x, outer, n, inner } => {
                let (outer, n, inner) = (*outer, *n, *inner);
                self.accum(grads, *x, |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |k: usize| (o * n + k) * inner + i;
                            let s: f64 = (0..n).map(|k| g[idx(k)] * out[idx(k)]).sum();
                            for k in 0..n {
                                d[idx(k)] += out[idx(k)] * (g[idx(k)] - s);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = self.value(*gain).len();
                let gv = self.value(*gain).data();
                self.accum(grads, *gain, |d| {
                    for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                        for k in 0..n {
                            d[k] += grow[k] * hrow[k];
                        }
                    }
                });
                self.accum(grads, *bias, |d| {
                    for grow in g.chunks(n) {
                        axpy(d, grow, 1.0);
                    }
                });
                self.accum(grads, *x, |d| {
                    let mut dh = vec![0.0; n];
                    for (r, (grow, hrow)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for k in 0..n {
                            dh[k] = grow[k] * gv[k];
                            mean_dh += dh[k];
                            mean_dh_h += dh[k] * hrow[k];
                        }
                        mean_dh /= n as f64;
                        mean_dh_h /= n as f64;
                        let drow = &mut d[r * n..(r + 1) * n];
                        for k in 0..n {
                            drow[k] += rstd[r] * (dh[k] - mean_dh - hrow[k] * mean_dh_h);
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let vx = self.value(*x).data();
                self.accum(grads, *x, |d| {
                    for ((d, gv), xv) in d.iter_mut().zip(g).zip(vx) {
                        *d += gv * kernels::gelu_grad(*xv);
                    }
                });
            }
            Op::Sigmoid(x) => self.accum(grads, *x, |d| {
                for ((d, gv), y) in d.iter_mut().zip(g).zip(out) {
                    *d += gv * y * (1.0 - y);
                }
            }),
            Op::Relu(x) => {
                let vx = self.value(*x).data();
                self.accum(grads, *x, |d| {
                    for ((d, gv), xv) in d.iter_mut().zip(g).zip(vx) {
                        if *xv > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let n = self.value(*x).cols();
                let w = node.value.cols();
                self.accum(grads, *x, |d| {
                    for (r, grow) in g.chunks(w).enumerate() {
                        axpy(&mut d[r * n + start..r * n + start + w], grow, 1.0);
                    }
                });
            }
            Op::ConcatCols(xs) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &x in xs {
                    let w = self.value(x).cols();
                    self.accum(grads, x, |d| {
                        for (r, drow) in d.chunks_mut(w).enumerate() {
                            axpy(drow, &g[r * total + offset..r * total + offset + w], 1.0);
                        }
                    });
                    offset += w;
                }
            }
            Op::GatherRows { table, ids } => {
                let dim = node.value.cols();
                self.accum(grads, *table, |d| {
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(&mut d[id * dim..(id + 1) * dim], &g[r * dim..(r + 1) * dim], 1.0);
                    }
                });
            }
            Op::RelGather { x, clip } => {
                let t = node.value.cols();
                let w = 2 * clip + 1;
                self.accum(grads, *x, |d| {
                    for i in 0..t {
                        for j in 0..t {
                            d[i * w + rel_index(i, j, *clip)] += g[i * t + j];
                        }
                    }
                });
            }
            Op::Im2Col1d { x, kernel, stride, pad } => {
                let (t, c) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                let width = kernel * c;
                let t_out = node.value.shape()[0];
                self.accum(grads, *x, |d| {
                    for o in 0..t_out {
                        for j in 0..*kernel {
                            let pos = (o * stride + j) as isize - *pad as isize;
                            if pos < 0 || pos as usize >= t {
                                continue;
                            }
                            let p = pos as usize;
                            axpy(
                                &mut d[p * c..(p + 1) * c],
                                &g[o * width + j * c..o * width + (j + 1) * c],
                                1.0,
                            );
                        }
                    }
                });
            }
            Op::Im2Col2d { x, kernel, stride, pad } => {
                let s = self.value(*x).shape();
                let (h, w, c) = (s[0], s[1], s[2]);
                let h_out = (h + 2 * pad - kernel) / stride + 1;
                let w_out = (w + 2 * pad - kernel) / stride + 1;
                let width = kernel * kernel * c;
                self.accum(grads, *x, |d| {
                    for i in 0..h_out {
                        for j in 0..w_out {
                            let row = (i * w_out + j) * width;
                            for a in 0..*kernel {
                                let y = (i * stride + a) as isize - *pad as isize;
                                if y < 0 || y as usize >= h {
                                    continue;
                                }
                                for b in 0..*kernel {
                                    let z = (j * stride + b) as isize - *pad as isize;
                                    if z < 0 || z as usize >= w {
                                        continue;
                                    }
                                    let src = (y as usize * w + z as usize) * c;
                                    let col = row + (a * kernel + b) * c;
                                    axpy(&mut d[src..src + c], &g[col..col + c], 1.0);
                                }
                            }
                        }
                    }
                });
            }
            Op::DepthwiseConv1d { x, w, pad } => {
                let vx = self.value(*x);
                let vw = self.value(*w);
                let (t, c) = (vx.shape()[0], vx.shape()[1]);
                let k = vw.shape()[0];
                let t_out = node.value.shape()[0];
                let taps = |o: usize, j: usize| -> Option<usize> {
                    let pos = (o + j) as isize - *pad as isize;
                    (pos >= 0 && (pos as usize) < t).then_some(pos as usize)
                };
                self.accum(grads, *x, |d| {
                    for o in 0..t_out {
                        for j in 0..k {
                            let Some(p) = taps(o, j) else { continue };
                            for ch in 0..c {
                                d[p * c + ch] += g[o * c + ch] * vw.data()[j * c + ch];
                            }
                        }
                    }
                });
                self.accum(grads, *w, |d| {
                    for o in 0..t_out {
                        for j in 0..k {
                            let Some(p) = taps(o, j) else { continue };
                            for ch in 0..c {
                                d[j * c + ch] += g[o * c + ch] * vx.data()[p * c + ch];
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => self.accum(grads, *x, |d| d.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                self.accum(grads, *x, |d| d.iter_mut().for_each(|v| *v += g[0] / n));
            }
            Op::LsCrossEntropy {
                logits,
                targets,
                eps,
                probs,
                count,
            } => {
                let k = self.value(*logits).cols();
                let scale = g[0] / *count as f64;
                self.accum(grads, *logits, |d| {
                    for (r, target) in targets.iter().enumerate() {
                        let Some(y) = *target else { continue };
                        for c in 0..k {
                            let w = eps / k as f64 + if c == y { 1.0 - eps } else { 0.0 };
                            d[r * k + c] += scale * (probs[r * k + c] - w);
                        }
                    }
                });
            }
        }
    }

    fn accum(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
        f(slot);
    }
}

fn axpy(dst: &mut [f64], src: &[f64], alpha: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

fn rel_index(i: usize, j: usize, clip: usize) -> usize {
    let rel = (j as isize - i as isize).clamp(-(clip as isize), clip as isize);
    (rel + clip as isize) as usize
}

/// Output length of a convolution: `floor((len + 2·pad − kernel)/stride) + 1`.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize, ComputeError> {
    let padded = len + 2 * pad;
    if kernel == 0 || stride == 0 || kernel > padded {
        return Err(ComputeError::KernelTooLarge { kernel, padded });
    }
    Ok((padded - kernel) / stride + 1)
}
