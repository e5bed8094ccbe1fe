//! Forward and backward kernels: 1D convolution (cross-correlation with
//! symmetric zero padding, stride 1), its transpose, max pooling and nearest
//! upsampling.
//!
//! Weight layouts: `Conv1d` weights are `(out_ch, in_ch, kernel)`,
//! `TransConv1d` weights are `(in_ch, out_ch, kernel)`. With that convention
//! the transposed convolution forward with a kernel `w` is exactly the
//! input-gradient map of a convolution with the same `w`, which makes the
//! pair adjoint: `<conv(x), y> == <x, transconv(y)>`.

use super::tensor::Tensor3;
use super::NnError;

/// Source range of an offset-`d` sliding update: indices `i` with both `i`
/// and `i + d` inside `[0, len)`.
#[inline]
fn shifted_range(len: usize, d: isize) -> (usize, usize) {
    let len_i = len as isize;
    let lo = (-d).max(0).min(len_i);
    let hi = (len_i - d).clamp(lo, len_i);
    (lo as usize, hi as usize)
}

/// `dst[i] += a * src[i]` over equal-length slices.
#[inline]
fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

fn check_conv_shapes(
    x: &Tensor3,
    w_len: usize,
    b_len: usize,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
) -> Result<(), NnError> {
    if kernel % 2 == 0 {
        return Err(NnError::InvalidSpec(format!(
            "kernel width {kernel} must be odd for symmetric same-padding"
        )));
    }
    if x.channels() != in_ch {
        return Err(NnError::ShapeMismatch(format!(
            "input has {} channels, layer expects {in_ch}",
            x.channels()
        )));
    }
    if w_len != out_ch * in_ch * kernel || b_len != out_ch {
        return Err(NnError::ShapeMismatch(format!(
            "weight/bias storage ({w_len}, {b_len}) does not match ({out_ch} x {in_ch} x {kernel}, {out_ch})"
        )));
    }
    Ok(())
}

/// Cross-correlation with symmetric zero padding:
/// `out[n,o,i] = b[o] + Σ_{c,k} x[n,c,i+k-K/2] * w[o,c,k]`.
pub fn conv1d_forward(
    x: &Tensor3,
    w: &[f64],
    b: &[f64],
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
) -> Result<Tensor3, NnError> {
    check_conv_shapes(x, w.len(), b.len(), in_ch, out_ch, kernel)?;
    let (n_batch, _, len) = x.shape();
    let half = (kernel / 2) as isize;
    let mut out = Tensor3::zeros(n_batch, out_ch, len);
    for n in 0..n_batch {
        for o in 0..out_ch {
            let out_row = out.row_mut(n, o);
            out_row.fill(b[o]);
            for c in 0..in_ch {
                let x_row = x.row(n, c);
                for k in 0..kernel {
                    let d = k as isize - half;
                    let (lo, hi) = shifted_range(len, d);
                    if lo >= hi {
                        continue;
                    }
                    let wv = w[(o * in_ch + c) * kernel + k];
                    let src = &x_row[(lo as isize + d) as usize..(hi as isize + d) as usize];
                    axpy(&mut out_row[lo..hi], src, wv);
                }
            }
        }
    }
    Ok(out)
}

/// Exact gradients of [`conv1d_forward`]: returns `(grad_x, grad_w, grad_b)`.
/// `grad_w`/`grad_b` are accumulated into the provided buffers so callers can
/// sum over sub-batches.
pub fn conv1d_backward(
    x: &Tensor3,
    w: &[f64],
    grad_out: &Tensor3,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> Result<Tensor3, NnError> {
    check_conv_shapes(x, w.len(), b_len_of(grad_b), in_ch, out_ch, kernel)?;
    let (n_batch, _, len) = x.shape();
    if grad_out.shape() != (n_batch, out_ch, len) {
        return Err(NnError::ShapeMismatch(format!(
            "grad_out shape {:?} does not match ({n_batch}, {out_ch}, {len})",
            grad_out.shape()
        )));
    }
    if grad_w.len() != w.len() {
        return Err(NnError::ShapeMismatch("grad_w buffer size".into()));
    }
    let half = (kernel / 2) as isize;
    let mut grad_x = Tensor3::zeros(n_batch, in_ch, len);
    for n in 0..n_batch {
        for o in 0..out_ch {
            let go_row = grad_out.row(n, o);
            grad_b[o] += go_row.iter().sum::<f64>();
            for c in 0..in_ch {
                let x_row = x.row(n, c);
                for k in 0..kernel {
                    let d = k as isize - half;
                    let (lo, hi) = shifted_range(len, d);
                    if lo >= hi {
                        continue;
                    }
                    let shifted = (lo as isize + d) as usize..(hi as isize + d) as usize;
                    // dL/dw[o,c,k] = Σ_{n,i} go[n,o,i] x[n,c,i+d]
                    grad_w[(o * in_ch + c) * kernel + k] +=
                        dot(&go_row[lo..hi], &x_row[shifted.clone()]);
                    // dL/dx[n,c,i+d] += go[n,o,i] w[o,c,k]
                    let wv = w[(o * in_ch + c) * kernel + k];
                    let gx_row = grad_x.row_mut(n, c);
                    axpy(&mut gx_row[shifted], &go_row[lo..hi], wv);
                }
            }
        }
    }
    Ok(grad_x)
}

fn b_len_of(b: &[f64]) -> usize {
    b.len()
}

/// Transposed convolution (scatter-add semantics):
/// `out[n,o,j] = b[o] + Σ_{c,k} x[n,c,j-k+K/2] * w[c,o,k]`
/// with weights stored `(in_ch, out_ch, kernel)`. This is the adjoint of
/// [`conv1d_forward`] for a shared kernel tensor.
pub fn transconv1d_forward(
    x: &Tensor3,
    w: &[f64],
    b: &[f64],
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
) -> Result<Tensor3, NnError> {
    if kernel % 2 == 0 {
        return Err(NnError::InvalidSpec(format!(
            "kernel width {kernel} must be odd for symmetric same-padding"
        )));
    }
    if x.channels() != in_ch {
        return Err(NnError::ShapeMismatch(format!(
            "input has {} channels, layer expects {in_ch}",
            x.channels()
        )));
    }
    if w.len() != in_ch * out_ch * kernel || b.len() != out_ch {
        return Err(NnError::ShapeMismatch(format!(
            "weight/bias storage ({}, {}) does not match ({in_ch} x {out_ch} x {kernel}, {out_ch})",
            w.len(),
            b.len()
        )));
    }
    let (n_batch, _, len) = x.shape();
    let half = (kernel / 2) as isize;
    let mut out = Tensor3::zeros(n_batch, out_ch, len);
    for n in 0..n_batch {
        for o in 0..out_ch {
            let out_row = out.row_mut(n, o);
            out_row.fill(b[o]);
            for c in 0..in_ch {
                let x_row = x.row(n, c);
                for k in 0..kernel {
                    let d = half - k as isize;
                    let (lo, hi) = shifted_range(len, d);
                    if lo >= hi {
                        continue;
                    }
                    let wv = w[(c * out_ch + o) * kernel + k];
                    let src = &x_row[(lo as isize + d) as usize..(hi as isize + d) as usize];
                    axpy(&mut out_row[lo..hi], src, wv);
                }
            }
        }
    }
    Ok(out)
}

/// Exact gradients of [`transconv1d_forward`].
pub fn transconv1d_backward(
    x: &Tensor3,
    w: &[f64],
    grad_out: &Tensor3,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> Result<Tensor3, NnError> {
    let (n_batch, _, len) = x.shape();
    if grad_out.shape() != (n_batch, out_ch, len) {
        return Err(NnError::ShapeMismatch(format!(
            "grad_out shape {:?} does not match ({n_batch}, {out_ch}, {len})",
            grad_out.shape()
        )));
    }
    if grad_w.len() != w.len() || w.len() != in_ch * out_ch * kernel {
        return Err(NnError::ShapeMismatch("grad_w buffer size".into()));
    }
    let half = (kernel / 2) as isize;
    let mut grad_x = Tensor3::zeros(n_batch, in_ch, len);
    for n in 0..n_batch {
        for o in 0..out_ch {
            let go_row = grad_out.row(n, o);
            grad_b[o] += go_row.iter().sum::<f64>();
            for c in 0..in_ch {
                let x_row = x.row(n, c);
                for k in 0..kernel {
                    let d = half - k as isize;
                    let (lo, hi) = shifted_range(len, d);
                    if lo >= hi {
                        continue;
                    }
                    let shifted = (lo as isize + d) as usize..(hi as isize + d) as usize;
                    grad_w[(c * out_ch + o) * kernel + k] +=
                        dot(&go_row[lo..hi], &x_row[shifted.clone()]);
                    let wv = w[(c * out_ch + o) * kernel + k];
                    let gx_row = grad_x.row_mut(n, c);
                    axpy(&mut gx_row[shifted], &go_row[lo..hi], wv);
                }
            }
        }
    }
    Ok(grad_x)
}

/// Per-window max with first-max tie-break. Returns the pooled tensor and
/// the absolute source index (within the row) of each output element.
pub fn maxpool_forward(
    x: &Tensor3,
    window: usize,
) -> Result<(Tensor3, Vec<u32>), NnError> {
    let (n_batch, channels, len) = x.shape();
    if window < 2 {
        return Err(NnError::InvalidSpec(format!(
            "pool window {window} must be at least 2"
        )));
    }
    if len % window != 0 {
        return Err(NnError::IndivisibleLength {
            length: len,
            window,
        });
    }
    let out_len = len / window;
    let mut out = Tensor3::zeros(n_batch, channels, out_len);
    let mut indices = vec![0u32; n_batch * channels * out_len];
    for n in 0..n_batch {
        for c in 0..channels {
            let x_row = x.row(n, c);
            let base = (n * channels + c) * out_len;
            let out_row = out.row_mut(n, c);
            for j in 0..out_len {
                let start = j * window;
                let mut best = x_row[start];
                let mut best_i = start;
                for i in start + 1..start + window {
                    if x_row[i] > best {
                        best = x_row[i];
                        best_i = i;
                    }
                }
                out_row[j] = best;
                indices[base + j] = best_i as u32;
            }
        }
    }
    Ok((out, indices))
}

/// Route each output gradient back to its recorded argmax position.
pub fn maxpool_backward(
    indices: &[u32],
    grad_out: &Tensor3,
    window: usize,
) -> Result<Tensor3, NnError> {
    let (n_batch, channels, out_len) = grad_out.shape();
    if indices.len() != n_batch * channels * out_len {
        return Err(NnError::ShapeMismatch(format!(
            "{} pool indices for grad shape {:?}",
            indices.len(),
            grad_out.shape()
        )));
    }
    let len = out_len * window;
    let mut grad_x = Tensor3::zeros(n_batch, channels, len);
    for n in 0..n_batch {
        for c in 0..channels {
            let go_row = grad_out.row(n, c);
            let base = (n * channels + c) * out_len;
            let gx_row = grad_x.row_mut(n, c);
            for j in 0..out_len {
                gx_row[indices[base + j] as usize] += go_row[j];
            }
        }
    }
    Ok(grad_x)
}

/// Nearest-neighbor repetition: `out[j] = x[j / factor]`.
pub fn upsample_forward(x: &Tensor3, factor: usize) -> Result<Tensor3, NnError> {
    if factor < 2 {
        return Err(NnError::InvalidSpec(format!(
            "upsample factor {factor} must be at least 2"
        )));
    }
    let (n_batch, channels, len) = x.shape();
    let mut out = Tensor3::zeros(n_batch, channels, len * factor);
    for n in 0..n_batch {
        for c in 0..channels {
            let x_row = x.row(n, c);
            let out_row = out.row_mut(n, c);
            for (i, &v) in x_row.iter().enumerate() {
                out_row[i * factor..(i + 1) * factor].fill(v);
            }
        }
    }
    Ok(out)
}

/// Each source element receives the sum of its replicated outputs.
pub fn upsample_backward(grad_out: &Tensor3, factor: usize) -> Result<Tensor3, NnError> {
    let (n_batch, channels, out_len) = grad_out.shape();
    if out_len % factor != 0 {
        return Err(NnError::ShapeMismatch(format!(
            "upsampled length {out_len} not divisible by factor {factor}"
        )));
    }
    let len = out_len / factor;
    let mut grad_x = Tensor3::zeros(n_batch, channels, len);
    for n in 0..n_batch {
        for c in 0..channels {
            let go_row = grad_out.row(n, c);
            let gx_row = grad_x.row_mut(n, c);
            for i in 0..len {
                let mut acc = 0.0;
                for r in 0..factor {
                    acc += go_row[i * factor + r];
                }
                gx_row[i] = acc;
            }
        }
    }
    Ok(grad_x)
}

/// ReLU forward.
pub fn relu_forward(x: &Tensor3) -> Tensor3 {
    let (n, c, l) = x.shape();
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor3::from_vec(n, c, l, data).expect("same shape")
}

/// ReLU backward: pass gradient where the input was strictly positive.
pub fn relu_backward(x: &Tensor3, grad_out: &Tensor3) -> Result<Tensor3, NnError> {
    if x.shape() != grad_out.shape() {
        return Err(NnError::ShapeMismatch(format!(
            "relu backward {:?} vs {:?}",
            x.shape(),
            grad_out.shape()
        )));
    }
    let (n, c, l) = x.shape();
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor3::from_vec(n, c, l, data).expect("same shape"))
}
