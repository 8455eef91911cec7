//! Tensor algebra with reverse-mode automatic differentiation.
//!
//! Everything the model and the trainer compute is expressed through the
//! primitives on [`Tape`]. Convolutions are composites: an unfold
//! (`im2col_*`) followed by a matrix product, so their gradients come for free
//! from the unfold's scatter and the matmul rule.

mod kernels;
mod tape;
mod tensor;

pub use kernels::{dot, gelu, log_sum_exp, sigmoid};
pub use tape::{conv_out_len, Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

/// Epsilon added to the variance inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComputeError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("kernel {kernel} does not fit padded input of length {padded}")]
    KernelTooLarge { kernel: usize, padded: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
}

/// 1-D convolution over time.
///
/// `x` is `[T, C_in]`, `weight` is `[kernel·C_in, C_out]` (window-major), and
/// the result is `[T_out, C_out]` with `T_out = floor((T + 2·pad − kernel)/stride) + 1`.
pub fn conv1d(
    tape: &mut Tape,
    x: Var,
    weight: Var,
    bias: Option<Var>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<Var, ComputeError> {
    let cols = tape.im2col_1d(x, kernel, stride, pad)?;
    let y = tape.matmul(cols, weight)?;
    match bias {
        Some(b) => tape.add_bias(y, b),
        None => Ok(y),
    }
}

/// 2-D convolution on a channels-last `[H, W, C_in]` input with a square
/// kernel; `weight` is `[kernel·kernel·C_in, C_out]`. Returns `[H_out, W_out, C_out]`.
pub fn conv2d(
    tape: &mut Tape,
    x: Var,
    weight: Var,
    bias: Option<Var>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<Var, ComputeError> {
    let (h, w) = match tape.shape(x) {
        [h, w, _] => (*h, *w),
        s => {
            return Err(ComputeError::ShapeMismatch {
                op: "conv2d",
                detail: format!("expected [H, W, C], got {s:?}"),
            })
        }
    };
    let h_out = conv_out_len(h, kernel, stride, pad)?;
    let w_out = conv_out_len(w, kernel, stride, pad)?;
    let cols = tape.im2col_2d(x, kernel, stride, pad)?;
    let mut y = tape.matmul(cols, weight)?;
    if let Some(b) = bias {
        y = tape.add_bias(y, b)?;
    }
    let c_out = tape.value(y).cols();
    tape.reshape(y, &[h_out, w_out, c_out])
}
