//! Forward and backward kernels for convolution, batch normalization,
//! average pooling and linear maps.
//!
//! Convolutions unfold input patches into a matrix and multiply; the other
//! kernels are direct loops over contiguous rows.

use nalgebra::DMatrix;

use super::Tensor;
use crate::error::{Error, Result};

/// Default batch-norm momentum for running statistics.
pub const BN_MOMENTUM: f64 = 0.1;
/// Default batch-norm epsilon.
pub const BN_EPSILON: f64 = 1e-5;

fn conv_out_extent(input: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::invalid("conv2d stride must be positive"));
    }
    if input + 2 * padding < k {
        return Err(Error::dim(
            "conv2d",
            format!("extent {input} with padding {padding} is smaller than kernel {k}"),
        ));
    }
    Ok((input + 2 * padding - k) / stride + 1)
}

/// Output columns `ow` whose input column `ow*stride + kw - padding` lies in `0..width`.
#[inline]
fn valid_range(out: usize, width: usize, kw: usize, stride: usize, padding: usize) -> (usize, usize) {
    // ow*stride + kw >= padding
    let lo = if kw >= padding {
        0
    } else {
        (padding - kw).div_ceil(stride)
    };
    // ow*stride + kw - padding <= width - 1
    let hi = if width + padding > kw {
        ((width + padding - kw - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Validated `(n, c_in, h, w, c_out, k)` of a convolution.
fn conv_dims(op: &'static str, input: &Tensor, kernels: &Tensor) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let [n, c_in, h, w] = input.dims4(op)?;
    match *kernels.shape() {
        [co, ci, kh, kw] if kh == kw => {
            if ci != c_in {
                return Err(Error::dim(op, format!("kernels expect {ci} input channels, input has {c_in}")));
            }
            Ok((n, c_in, h, w, co, kh))
        }
        _ => Err(Error::dim(
            op,
            format!("kernels must be [C_out,C_in,k,k], got {:?}", kernels.shape()),
        )),
    }
}

/// Geometry of one convolution, for unfolding input patches into columns.
struct Patches {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    padding: usize,
}

impl Patches {
    /// Rows of the unfolded matrix: one per (input channel, kernel tap).
    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    /// Columns: one per (sample, output position).
    fn cols(&self) -> usize {
        self.n * self.ho * self.wo
    }

    /// Visits every in-bounds run of taps: `f(row, first col, first input
    /// index, run length)`. Within a run, columns advance by one and input
    /// positions by the stride. Out-of-bounds taps read the zero padding.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (k, s, p) = (self.k, self.stride, self.padding);
        for b in 0..self.n {
            for ci in 0..self.c_in {
                let plane = (b * self.c_in + ci) * self.h * self.w;
                for kh in 0..k {
                    for kw in 0..k {
                        let row = (ci * k + kh) * k + kw;
                        let (lo, hi) = valid_range(self.wo, self.w, kw, s, p);
                        if lo == hi {
                            continue;
                        }
                        for oh in 0..self.ho {
                            let ih = (oh * s + kh) as isize - p as isize;
                            if ih < 0 || ih >= self.h as isize {
                                continue;
                            }
                            let col = (b * self.ho + oh) * self.wo + lo;
                            let idx = plane + ih as usize * self.w + lo * s + kw - p;
                            f(row, col, idx, hi - lo);
                        }
                    }
                }
            }
        }
    }

    /// The transposed patch matrix `[cols, rows]`: column `row` holds tap
    /// `row` for every output position.
    fn unfold_t(&self, x: &[f64]) -> DMatrix<f64> {
        let nc = self.cols();
        let mut m = DMatrix::zeros(nc, self.rows());
        let dst = m.as_mut_slice();
        let s = self.stride;
        self.for_each_run(|row, col, idx, len| {
            let out = &mut dst[row * nc + col..][..len];
            if s == 1 {
                out.copy_from_slice(&x[idx..][..len]);
            } else {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = x[idx + i * s];
                }
            }
        });
        m
    }

    /// Adds the transposed patch gradient back onto input positions.
    fn fold_t(&self, dpt: &DMatrix<f64>, gx: &mut [f64]) {
        let nc = self.cols();
        let src = dpt.as_slice();
        let s = self.stride;
        self.for_each_run(|row, col, idx, len| {
            for (i, v) in src[row * nc + col..][..len].iter().enumerate() {
                gx[idx + i * s] += v;
            }
        });
    }
}

fn patches(input: &Tensor, kernels: &Tensor, stride: usize, padding: usize, op: &'static str) -> Result<(Patches, usize)> {
    let (n, c_in, h, w, c_out, k) = conv_dims(op, input, kernels)?;
    let ho = conv_out_extent(h, k, stride, padding)?;
    let wo = conv_out_extent(w, k, stride, padding)?;
    Ok((
        Patches {
            n,
            c_in,
            h,
            w,
            k,
            ho,
            wo,
            stride,
            padding,
        },
        c_out,
    ))
}

/// 2-D cross-correlation of `input` (`[C_in,H,W]` or `[N,C_in,H,W]`) with
/// `kernels` (`[C_out,C_in,k,k]`). The output keeps the input's rank.
///
/// Input patches are unfolded into columns so that the whole batch is one
/// matrix product.
pub fn conv2d(input: &Tensor, kernels: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (g, c_out) = patches(input, kernels, stride, padding, "conv2d")?;
    let pt = g.unfold_t(input.data());
    // kernels are row-major [C_out, rows], i.e. column-major [rows, C_out]
    let wt = DMatrix::from_column_slice(g.rows(), c_out, kernels.data());
    let yt = pt * wt;
    let (plane, nc) = (g.ho * g.wo, g.cols());
    let y = yt.as_slice();
    let mut out = vec![0.0; g.n * c_out * plane];
    for b in 0..g.n {
        for co in 0..c_out {
            out[(b * c_out + co) * plane..][..plane].copy_from_slice(&y[co * nc + b * plane..][..plane]);
        }
    }
    let shape = if input.rank() == 3 {
        vec![c_out, g.ho, g.wo]
    } else {
        vec![g.n, c_out, g.ho, g.wo]
    };
    Tensor::new(shape, out)
}

/// Gradients of `conv2d` with respect to its input (when requested) and kernels.
pub(crate) fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
    need_input: bool,
) -> Result<(Option<Tensor>, Tensor)> {
    let (g, c_out) = patches(input, kernels, stride, padding, "conv2d_backward")?;
    let [gn, gc, gh, gw_] = grad_out.dims4("conv2d_backward")?;
    if [gn, gc, gh, gw_] != [g.n, c_out, g.ho, g.wo] {
        return Err(Error::dim(
            "conv2d_backward",
            format!("output gradient {:?} does not match the forward output", grad_out.shape()),
        ));
    }
    let (plane, nc) = (g.ho * g.wo, g.cols());
    let go = grad_out.data();
    let mut dyt = DMatrix::zeros(nc, c_out);
    let d = dyt.as_mut_slice();
    for b in 0..g.n {
        for co in 0..c_out {
            d[co * nc + b * plane..][..plane].copy_from_slice(&go[(b * c_out + co) * plane..][..plane]);
        }
    }
    let pt = g.unfold_t(input.data());
    // column-major [rows, C_out] is the row-major kernel layout
    let gw = pt.tr_mul(&dyt).as_slice().to_vec();
    let gx = if need_input {
        let wt = DMatrix::from_column_slice(g.rows(), c_out, kernels.data());
        let dpt = dyt * wt.transpose();
        let mut gx = vec![0.0; input.len()];
        g.fold_t(&dpt, &mut gx);
        Some(Tensor::new(input.shape().to_vec(), gx)?)
    } else {
        None
    };
    Ok((gx, Tensor::new(kernels.shape().to_vec(), gw)?))
}

/// Non-overlapping average pooling with a square `kernel`.
pub fn avg_pool(input: &Tensor, kernel: usize) -> Result<Tensor> {
    let [n, c, h, w] = input.dims4("avg_pool")?;
    if kernel == 0 {
        return Err(Error::invalid("avg_pool kernel must be positive"));
    }
    if h % kernel != 0 || w % kernel != 0 {
        return Err(Error::dim(
            "avg_pool",
            format!("kernel {kernel} does not divide spatial extent {h}x{w}"),
        ));
    }
    if kernel == 1 {
        return Ok(input.clone());
    }
    let (ho, wo) = (h / kernel, w / kernel);
    let scale = 1.0 / (kernel * kernel) as f64;
    let x = input.data();
    let mut out = vec![0.0; n * c * ho * wo];
    for plane in 0..n * c {
        let xp = &x[plane * h * w..][..h * w];
        let op = &mut out[plane * ho * wo..][..ho * wo];
        for ih in 0..h {
            let orow = &mut op[(ih / kernel) * wo..][..wo];
            for (iw, v) in xp[ih * w..][..w].iter().enumerate() {
                orow[iw / kernel] += v;
            }
        }
        for v in op.iter_mut() {
            *v *= scale;
        }
    }
    let mut shape = input.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = ho;
    shape[r - 1] = wo;
    Tensor::new(shape, out)
}

pub(crate) fn avg_pool_backward(input_shape: &[usize], grad_out: &Tensor, kernel: usize) -> Result<Tensor> {
    if kernel == 1 {
        return Ok(grad_out.clone());
    }
    let (n, c, h, w) = match *input_shape {
        [n, c, h, w] => (n, c, h, w),
        [c, h, w] => (1, c, h, w),
        _ => return Err(Error::dim("avg_pool_backward", "bad rank")),
    };
    let (ho, wo) = (h / kernel, w / kernel);
    let scale = 1.0 / (kernel * kernel) as f64;
    let g = grad_out.data();
    let mut gx = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        let gp = &g[plane * ho * wo..][..ho * wo];
        let xp = &mut gx[plane * h * w..][..h * w];
        for ih in 0..h {
            let grow = &gp[(ih / kernel) * wo..][..wo];
            for (iw, d) in xp[ih * w..][..w].iter_mut().enumerate() {
                *d = grow[iw / kernel] * scale;
            }
        }
    }
    Tensor::new(input_shape.to_vec(), gx)
}

/// Training or inference behaviour of batch normalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates.
    Eval,
}

/// Per-channel running mean/variance tracked by batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum: BN_MOMENTUM,
        }
    }

    /// Exponential moving average update from biased batch variance over
    /// `count` elements per channel (stored unbiased).
    pub fn update(&mut self, batch_mean: &[f64], batch_var: &[f64], count: usize) {
        let m = self.momentum;
        let correction = if count > 1 {
            count as f64 / (count - 1) as f64
        } else {
            1.0
        };
        for c in 0..self.mean.len() {
            self.mean[c] = (1.0 - m) * self.mean[c] + m * batch_mean[c];
            self.var[c] = (1.0 - m) * self.var[c] + m * batch_var[c] * correction;
        }
    }
}

/// Cached quantities of a training-mode batch-norm forward pass.
#[derive(Clone, Debug)]
pub(crate) struct BnCache {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub xhat: Tensor,
    pub count: usize,
}

fn bn_check(input: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<[usize; 4]> {
    let dims = input.dims4("batch_norm")?;
    let c = dims[1];
    if gamma.len() != c || beta.len() != c {
        return Err(Error::dim(
            "batch_norm",
            format!(
                "{c} channels but gamma/beta have {}/{} entries",
                gamma.len(),
                beta.len()
            ),
        ));
    }
    Ok(dims)
}

pub(crate) fn bn_train_forward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, BnCache)> {
    let [n, c, h, w] = bn_check(input, gamma, beta)?;
    let count = n * h * w;
    if count == 0 {
        return Err(Error::invalid("batch_norm in train mode needs a non-empty batch"));
    }
    let hw = h * w;
    let x = input.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            mean[ch] += x[(b * c + ch) * hw..][..hw].iter().sum::<f64>();
        }
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    for b in 0..n {
        for ch in 0..c {
            let m = mean[ch];
            var[ch] += x[(b * c + ch) * hw..][..hw]
                .iter()
                .map(|v| (v - m) * (v - m))
                .sum::<f64>();
        }
    }
    for v in var.iter_mut() {
        *v /= count as f64;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    let (g, bt) = (gamma.data(), beta.data());
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                let xh = (x[i] - mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                y[i] = g[ch] * xh + bt[ch];
            }
        }
    }
    let shape = input.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), y)?,
        BnCache {
            mean,
            var,
            inv_std,
            xhat: Tensor::new(shape, xhat)?,
            count,
        },
    ))
}

/// Returns (grad_input, grad_gamma, grad_beta) for a training-mode pass.
pub(crate) fn bn_train_backward(
    gamma: &Tensor,
    cache: &BnCache,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [n, c, h, w] = cache.xhat.dims4("batch_norm_backward")?;
    let hw = h * w;
    let m = cache.count as f64;
    let xh = cache.xhat.data();
    let g = grad_out.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                dgamma[ch] += g[i] * xh[i];
                dbeta[ch] += g[i];
            }
        }
    }
    let mut dx = vec![0.0; g.len()];
    let gm = gamma.data();
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let k = gm[ch] * cache.inv_std[ch] / m;
            for i in off..off + hw {
                dx[i] = k * (m * g[i] - dbeta[ch] - xh[i] * dgamma[ch]);
            }
        }
    }
    Ok((
        Tensor::new(grad_out.shape().to_vec(), dx)?,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}

pub(crate) fn bn_eval_forward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &RunningStats,
    eps: f64,
) -> Result<(Tensor, Tensor)> {
    let [n, c, h, w] = bn_check(input, gamma, beta)?;
    if stats.mean.len() != c || stats.var.len() != c {
        return Err(Error::dim("batch_norm", "running statistics length"));
    }
    let hw = h * w;
    let x = input.data();
    let (g, bt) = (gamma.data(), beta.data());
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let inv = 1.0 / (stats.var[ch] + eps).sqrt();
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                let xh = (x[i] - stats.mean[ch]) * inv;
                xhat[i] = xh;
                y[i] = g[ch] * xh + bt[ch];
            }
        }
    }
    let shape = input.shape().to_vec();
    Ok((Tensor::new(shape.clone(), y)?, Tensor::new(shape, xhat)?))
}

/// Returns (grad_input, grad_gamma, grad_beta) for an eval-mode pass.
pub(crate) fn bn_eval_backward(
    gamma: &Tensor,
    stats: &RunningStats,
    eps: f64,
    xhat: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [n, c, h, w] = xhat.dims4("batch_norm_backward")?;
    let hw = h * w;
    let g = grad_out.data();
    let xh = xhat.data();
    let gm = gamma.data();
    let mut dx = vec![0.0; g.len()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let k = gm[ch] / (stats.var[ch] + eps).sqrt();
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                dx[i] = k * g[i];
                dgamma[ch] += g[i] * xh[i];
                dbeta[ch] += g[i];
            }
        }
    }
    Ok((
        Tensor::new(grad_out.shape().to_vec(), dx)?,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}

/// Batch normalization over the channel axis of a `[C,H,W]`/`[N,C,H,W]` tensor.
///
/// In [`BatchNormMode::Train`] the batch statistics are used and folded into
/// `stats`; in [`BatchNormMode::Eval`] `stats` is used as-is.
pub fn batch_norm(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &mut RunningStats,
    mode: BatchNormMode,
    eps: f64,
) -> Result<Tensor> {
    match mode {
        BatchNormMode::Train => {
            let (y, cache) = bn_train_forward(input, gamma, beta, eps)?;
            stats.update(&cache.mean, &cache.var, cache.count);
            Ok(y)
        }
        BatchNormMode::Eval => Ok(bn_eval_forward(input, gamma, beta, stats, eps)?.0),
    }
}

/// `weight · input + bias` for `input` of shape `[D_in]` or `[B, D_in]`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (rows, d_in) = match *input.shape() {
        [d] => (1, d),
        [b, d] => (b, d),
        _ => return Err(Error::dim("linear", format!("input shape {:?}", input.shape()))),
    };
    let d_out = match *weight.shape() {
        [o, i] if i == d_in => o,
        _ => {
            return Err(Error::dim(
                "linear",
                format!("weight {:?} vs input width {d_in}", weight.shape()),
            ))
        }
    };
    if bias.len() != d_out {
        return Err(Error::dim(
            "linear",
            format!("bias has {} entries, expected {d_out}", bias.len()),
        ));
    }
    let (x, wt, bs) = (input.data(), weight.data(), bias.data());
    let mut out = Vec::with_capacity(rows * d_out);
    for r in 0..rows {
        let xr = &x[r * d_in..][..d_in];
        for o in 0..d_out {
            let wr = &wt[o * d_in..][..d_in];
            let dot: f64 = wr.iter().zip(xr).map(|(a, b)| a * b).sum();
            out.push(dot + bs[o]);
        }
    }
    let shape = if input.rank() == 1 {
        vec![d_out]
    } else {
        vec![rows, d_out]
    };
    Tensor::new(shape, out)
}

/// Returns (grad_input, grad_weight, grad_bias).
pub(crate) fn linear_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let d_in = *input.shape().last().unwrap_or(&0);
    let rows = input.len() / d_in.max(1);
    let d_out = weight.shape()[0];
    let (x, wt, g) = (input.data(), weight.data(), grad_out.data());
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; d_out];
    for r in 0..rows {
        let xr = &x[r * d_in..][..d_in];
        for o in 0..d_out {
            let gv = g[r * d_out + o];
            gb[o] += gv;
            let wr = &wt[o * d_in..][..d_in];
            let gwr = &mut gw[o * d_in..][..d_in];
            let gxr = &mut gx[r * d_in..][..d_in];
            for i in 0..d_in {
                gwr[i] += gv * xr[i];
                gxr[i] += gv * wr[i];
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::new(weight.shape().to_vec(), gw)?,
        Tensor::new(vec![d_out], gb)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Direct six-nested-loop convolution.
    fn conv_oracle(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
        let [c_in, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2]];
        let [c_out, _, kk, _] = [k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]];
        let ho = (h + 2 * pad - kk) / stride + 1;
        let wo = (w + 2 * pad - kk) / stride + 1;
        let mut out = vec![0.0; c_out * ho * wo];
        for co in 0..c_out {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut s = 0.0;
                    for ci in 0..c_in {
                        for a in 0..kk {
                            for b in 0..kk {
                                let ih = (oh * stride + a) as isize - pad as isize;
                                let iw = (ow * stride + b) as isize - pad as isize;
                                if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < w {
                                    s += x.data()[(ci * h + ih as usize) * w + iw as usize]
                                        * k.data()[((co * c_in + ci) * kk + a) * kk + b];
                                }
                            }
                        }
                    }
                    out[(co * ho + oh) * wo + ow] = s;
                }
            }
        }
        out
    }

    fn assert_close(a: &[f64], b: &[f64], rel: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!(
                (x - y).abs() <= rel * x.abs().max(y.abs()).max(1.0),
                "{x} vs {y}"
            );
        }
    }

    #[test]
    fn conv_window_sum() {
        let x = Tensor::ones(&[1, 3, 3]);
        let k = Tensor::ones(&[1, 1, 3, 3]);
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[1, 4, 5], &mut rng);
        let y = conv2d(&x, &Tensor::ones(&[1, 1, 1, 1]), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[2, 5, 5], &mut rng);
        let k = random(&[3, 2, 3, 3], &mut rng);
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[3, 3, 3]);
        assert_close(y.data(), &conv_oracle(&x, &k, 1, 0), 1e-12);
    }

    #[test]
    fn conv_matches_oracle_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..120 {
            let c_in = rng.gen_range(1..4);
            let c_out = rng.gen_range(1..4);
            let k = [1, 3, 5][rng.gen_range(0..3)];
            let h = rng.gen_range(k..9);
            let stride = rng.gen_range(1..3);
            let pad = rng.gen_range(0..=k / 2 + 1);
            let x = random(&[c_in, h, h], &mut rng);
            let kern = random(&[c_out, c_in, k, k], &mut rng);
            let y = conv2d(&x, &kern, stride, pad).unwrap();
            assert_close(y.data(), &conv_oracle(&x, &kern, stride, pad), 1e-12);
        }
    }

    #[test]
    fn conv_channel_mismatch_is_dimension_error() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(matches!(conv2d(&x, &k, 1, 1), Err(Error::Dimension { .. })));
        let small = Tensor::zeros(&[3, 2, 2]);
        assert!(conv2d(&small, &k, 1, 0).is_err());
    }

    #[test]
    fn avg_pool_examples() {
        let x = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(avg_pool(&x, 2).unwrap().data(), &[0.75]);
        assert_eq!(avg_pool(&x, 1).unwrap(), x);
        assert!(avg_pool(&Tensor::zeros(&[1, 3, 3]), 2).is_err());
    }

    #[test]
    fn avg_pool_matches_oracle_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let k = [1, 2, 4][rng.gen_range(0..3)];
            let c = rng.gen_range(1..5);
            let d = k * rng.gen_range(1..5);
            let x = random(&[c, d, d], &mut rng);
            let y = avg_pool(&x, k).unwrap();
            let o = d / k;
            let mut expect = vec![0.0; c * o * o];
            for ch in 0..c {
                for i in 0..o {
                    for j in 0..o {
                        let mut s = 0.0;
                        for a in 0..k {
                            for b in 0..k {
                                s += x.data()[(ch * d + i * k + a) * d + j * k + b];
                            }
                        }
                        expect[(ch * o + i) * o + j] = s / (k * k) as f64;
                    }
                }
            }
            assert_close(y.data(), &expect, 1e-12);
        }
    }

    #[test]
    fn linear_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[4], &mut rng);
        let eye = Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        assert_eq!(linear(&x, &eye, &Tensor::zeros(&[4])).unwrap(), x);
        let b = random(&[3], &mut rng);
        assert_eq!(linear(&x, &Tensor::zeros(&[3, 4]), &b).unwrap(), b);
        assert!(linear(&x, &Tensor::zeros(&[3, 5]), &b).is_err());
    }

    #[test]
    fn linear_matches_oracle_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x = random(&[4], &mut rng);
            let w = random(&[3, 4], &mut rng);
            let b = random(&[3], &mut rng);
            let y = linear(&x, &w, &b).unwrap();
            let expect: Vec<f64> = (0..3)
                .map(|o| (0..4).map(|i| w.data()[o * 4 + i] * x.data()[i]).sum::<f64>() + b.data()[o])
                .collect();
            assert_close(y.data(), &expect, 1e-12);
        }
    }

    #[test]
    fn batch_norm_zero_affine_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[3, 2, 4, 4], &mut rng);
        let mut stats = RunningStats::new(2);
        let y = batch_norm(
            &x,
            &Tensor::zeros(&[2]),
            &Tensor::zeros(&[2]),
            &mut stats,
            BatchNormMode::Train,
            BN_EPSILON,
        )
        .unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_norm_fixed_point() {
        // per channel: values {-1, 1} are zero mean, unit (biased) variance
        let x = Tensor::new(vec![2, 1, 1, 2], vec![-1.0, 1.0, 1.0, -1.0]).unwrap();
        let mut stats = RunningStats::new(1);
        let y = batch_norm(
            &x,
            &Tensor::ones(&[1]),
            &Tensor::zeros(&[1]),
            &mut stats,
            BatchNormMode::Train,
            1e-12,
        )
        .unwrap();
        assert_close(y.data(), x.data(), 1e-6);
    }

    #[test]
    fn batch_norm_output_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[5, 3, 4, 4], &mut rng).map(|v| 3.0 * v + 1.5);
        let gamma = Tensor::new(vec![3], vec![0.5, 2.0, -1.0]).unwrap();
        let beta = Tensor::new(vec![3], vec![0.1, -0.3, 2.0]).unwrap();
        let mut stats = RunningStats::new(3);
        let y = batch_norm(&x, &gamma, &beta, &mut stats, BatchNormMode::Train, BN_EPSILON).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..5)
                .flat_map(|b| y.data()[(b * 3 + ch) * 16..][..16].to_vec())
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            assert!((m - beta.data()[ch]).abs() < 1e-5);
            assert!((v - gamma.data()[ch].powi(2)).abs() < 1e-5 * v.max(1.0) + 1e-4 * gamma.data()[ch].powi(2));
        }
        // running stats moved toward the batch statistics
        assert!(stats.mean.iter().all(|&m| m != 0.0));
    }

    #[test]
    fn batch_norm_empty_train_batch_errors() {
        let x = Tensor::zeros(&[0, 2, 3, 3]);
        let mut stats = RunningStats::new(2);
        let r = batch_norm(
            &x,
            &Tensor::ones(&[2]),
            &Tensor::zeros(&[2]),
            &mut stats,
            BatchNormMode::Train,
            BN_EPSILON,
        );
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }
}
