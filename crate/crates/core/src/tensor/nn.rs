//! Neural-network operations: convolution, pooling, normalization, dropout,
//! activations and the classification loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Output extent of a valid window sweep: `floor((len - kernel) / stride) + 1`.
pub fn pooled_len(len: usize, kernel: usize, stride: usize) -> Option<usize> {
    (kernel >= 1 && stride >= 1 && kernel <= len).then(|| (len - kernel) / stride + 1)
}

/// `[B, Cin, H, W]` against `[Cout, Cin, kh, kw]` gives `[B, Cout, H-kh+1, W-kw+1]`.
pub fn conv2d_output_shape(input: &[usize], kernel: &[usize]) -> Result<[usize; 4]> {
    if input.len() != 4 || kernel.len() != 4 {
        return Err(Error::dim(
            "conv2d",
            format!("expected rank-4 input and kernel, got {input:?} and {kernel:?}"),
        ));
    }
    if input[1] != kernel[1] {
        return Err(Error::dim(
            "conv2d",
            format!("input channels {} (axis 1 of {input:?}) vs kernel {} (axis 1 of {kernel:?})", input[1], kernel[1]),
        ));
    }
    if kernel[2] > input[2] || kernel[3] > input[3] {
        return Err(Error::dim(
            "conv2d",
            format!("kernel {kernel:?} exceeds input {input:?} on axes 2/3"),
        ));
    }
    Ok([input[0], kernel[0], input[2] - kernel[2] + 1, input[3] - kernel[3] + 1])
}

/// Fills `cols` (`[Cin*kh*kw, Ho*Wo]`) with the receptive fields of one image.
fn im2col<T: Scalar>(x: &[T], cin: usize, h: usize, w: usize, kh: usize, kw: usize, cols: &mut [T]) {
    let (ho, wo) = (h - kh + 1, w - kw + 1);
    let p = ho * wo;
    let mut row = 0;
    for c in 0..cin {
        for u in 0..kh {
            for v in 0..kw {
                let dst = &mut cols[row * p..(row + 1) * p];
                for i in 0..ho {
                    let src = (c * h + i + u) * w + v;
                    dst[i * wo..(i + 1) * wo].copy_from_slice(&x[src..src + wo]);
                }
                row += 1;
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], cin: usize, h: usize, w: usize, kh: usize, kw: usize, dx: &mut [T]) {
    let (ho, wo) = (h - kh + 1, w - kw + 1);
    let p = ho * wo;
    let mut row = 0;
    for c in 0..cin {
        for u in 0..kh {
            for v in 0..kw {
                let src = &cols[row * p..(row + 1) * p];
                for i in 0..ho {
                    let dst = (c * h + i + u) * w + v;
                    for (d, &s) in dx[dst..dst + wo].iter_mut().zip(&src[i * wo..(i + 1) * wo]) {
                        *d = *d + s;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Valid (unpadded) 2-D cross-correlation with unit stride.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let out_shape = conv2d_output_shape(input.shape(), kernel.shape())?;
    let [b, cout, ho, wo] = out_shape;
    let (cin, h, w) = (input.shape()[1], input.shape()[2], input.shape()[3]);
    let (kh, kw) = (kernel.shape()[2], kernel.shape()[3]);
    if let Some(bs) = bias {
        if bs.shape() != [cout] {
            return Err(Error::dim("conv2d", format!("bias {:?} for {cout} filters", bs.shape())));
        }
    }
    let kc = cin * kh * kw;
    let p = ho * wo;
    let img = cin * h * w;
    let mut out = vec![T::zero(); b * cout * p];
    let mut cols = vec![T::zero(); kc * p];
    for bi in 0..b {
        im2col(&input.data()[bi * img..(bi + 1) * img], cin, h, w, kh, kw, &mut cols);
        let ob = &mut out[bi * cout * p..(bi + 1) * cout * p];
        if let Some(bs) = bias {
            for (o, row) in ob.chunks_exact_mut(p).enumerate() {
                row.fill(bs.data()[o]);
            }
        }
        T::gemm(cout, kc, p, T::one(), kernel.data(), kc as isize, 1, &cols, p as isize, 1, T::one(), ob, p as isize, 1);
    }
    let (xc, kcl) = (input.clone(), kernel.clone());
    let bias_grad = bias.map(|t| t.requires_grad());
    let mut inputs = vec![input, kernel];
    if let Some(bs) = bias {
        inputs.push(bs);
    }
    Ok(Tensor::from_op("conv2d", out, out_shape.to_vec(), &inputs, move |g| {
        let mut dx = xc.requires_grad().then(|| vec![T::zero(); xc.numel()]);
        let mut dk = kcl.requires_grad().then(|| vec![T::zero(); kcl.numel()]);
        let mut cols = vec![T::zero(); kc * p];
        for bi in 0..b {
            let gb = &g[bi * cout * p..(bi + 1) * cout * p];
            if let Some(dk) = dk.as_mut() {
                im2col(&xc.data()[bi * img..(bi + 1) * img], cin, h, w, kh, kw, &mut cols);
                // g_b [cout, p] x cols^T [p, kc]
                T::gemm(cout, p, kc, T::one(), gb, p as isize, 1, &cols, 1, p as isize, T::one(), dk, kc as isize, 1);
            }
            if let Some(dx) = dx.as_mut() {
                // K^T [kc, cout] x g_b [cout, p]
                T::gemm(kc, cout, p, T::one(), kcl.data(), 1, kc as isize, gb, p as isize, 1, T::zero(), &mut cols, p as isize, 1);
                col2im_add(&cols, cin, h, w, kh, kw, &mut dx[bi * img..(bi + 1) * img]);
            }
        }
        let mut grads = vec![dx, dk];
        if let Some(flag) = bias_grad {
            grads.push(flag.then(|| {
                let mut db = vec![T::zero(); cout];
                for gb in g.chunks_exact(cout * p) {
                    for (o, row) in gb.chunks_exact(p).enumerate() {
                        db[o] = db[o] + row.iter().copied().sum::<T>();
                    }
                }
                db
            }));
        }
        grads
    }))
}

/// Strided window means over the last two axes of `[B, C, H, W]`.
pub fn avg_pool2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: (usize, usize),
    stride: (usize, usize),
) -> Result<Tensor<T>> {
    if input.ndim() != 4 {
        return Err(Error::dim("avg_pool2d", format!("expected rank 4, got {:?}", input.shape())));
    }
    let (bc, h, w) = (input.shape()[0] * input.shape()[1], input.shape()[2], input.shape()[3]);
    let (ho, wo) = match (pooled_len(h, kernel.0, stride.0), pooled_len(w, kernel.1, stride.1)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::dim(
                "avg_pool2d",
                format!("kernel {kernel:?} / stride {stride:?} invalid for input {:?}", input.shape()),
            ))
        }
    };
    let inv = T::one() / T::from_usize(kernel.0 * kernel.1).unwrap();
    let x = input.data();
    let mut out = Vec::with_capacity(bc * ho * wo);
    for m in 0..bc {
        let plane = &x[m * h * w..(m + 1) * h * w];
        for i in 0..ho {
            for j in 0..wo {
                let mut s = T::zero();
                for u in 0..kernel.0 {
                    let r = (i * stride.0 + u) * w + j * stride.1;
                    s = s + plane[r..r + kernel.1].iter().copied().sum::<T>();
                }
                out.push(s * inv);
            }
        }
    }
    let mut shape = input.shape().to_vec();
    shape[2] = ho;
    shape[3] = wo;
    let n = input.numel();
    Ok(Tensor::from_op("avg_pool2d", out, shape, &[input], move |g| {
        let mut dx = vec![T::zero(); n];
        for m in 0..bc {
            let plane = &mut dx[m * h * w..(m + 1) * h * w];
            for i in 0..ho {
                for j in 0..wo {
                    let gv = g[(m * ho + i) * wo + j] * inv;
                    for u in 0..kernel.0 {
                        let r = (i * stride.0 + u) * w + j * stride.1;
                        plane[r..r + kernel.1].iter_mut().for_each(|d| *d = *d + gv);
                    }
                }
            }
        }
        vec![Some(dx)]
    }))
}

/// Segment boundaries `floor(i * len / target)` for `i = 0..=target`.
pub(crate) fn adaptive_bounds(len: usize, target: usize) -> Vec<usize> {
    (0..=target).map(|i| i * len / target).collect()
}

/// Averages the last axis of length `L` into `target` contiguous segments.
pub fn adaptive_avg_pool<T: Scalar>(input: &Tensor<T>, target: usize) -> Result<Tensor<T>> {
    let len = *input.shape().last().expect("rank >= 1");
    if target == 0 || target > len {
        return Err(Error::dim(
            "adaptive_avg_pool",
            format!("cannot pool length {len} into {target}"),
        ));
    }
    let bounds = adaptive_bounds(len, target);
    let rows = input.numel() / len;
    let x = input.data();
    let mut out = Vec::with_capacity(rows * target);
    for r in 0..rows {
        let row = &x[r * len..(r + 1) * len];
        for s in bounds.windows(2) {
            let seg = &row[s[0]..s[1]];
            out.push(seg.iter().copied().sum::<T>() / T::from_usize(seg.len()).unwrap());
        }
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = target;
    Ok(Tensor::from_op("adaptive_avg_pool", out, shape, &[input], move |g| {
        let mut dx = vec![T::zero(); rows * len];
        for r in 0..rows {
            for (i, s) in bounds.windows(2).enumerate() {
                let gv = g[r * target + i] / T::from_usize(s[1] - s[0]).unwrap();
                dx[r * len + s[0]..r * len + s[1]].iter_mut().for_each(|d| *d = gv);
            }
        }
        vec![Some(dx)]
    }))
}

/// Running statistics tracked by batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats { mean: vec![T::zero(); channels], var: vec![T::one(); channels] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig { eps: 1e-5, momentum: 0.1 }
    }
}

/// Per-channel normalization of `[B, C, ...]` over batch and trailing axes.
///
/// Train mode normalizes with the (biased) batch statistics and folds them
/// into `stats` with the configured momentum (unbiased variance); eval mode
/// normalizes with `stats` as constants.
pub fn batch_norm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    mode: Mode,
    cfg: BatchNormConfig,
) -> Result<Tensor<T>> {
    if input.ndim() < 2 {
        return Err(Error::dim("batch_norm", format!("expected [B, C, ...], got {:?}", input.shape())));
    }
    let (b, c) = (input.shape()[0], input.shape()[1]);
    if gamma.shape() != [c] || beta.shape() != [c] || stats.mean.len() != c || stats.var.len() != c {
        return Err(Error::dim(
            "batch_norm",
            format!("affine/state sized for {} channels, input has {c}", gamma.numel()),
        ));
    }
    if mode == Mode::Train && b < 2 {
        return Err(Error::Config("batch_norm in train mode needs a batch of at least 2".into()));
    }
    let s: usize = input.shape()[2..].iter().product();
    let n = b * s;
    let nt = T::from_usize(n).unwrap();
    let eps = lit::<T>(cfg.eps);
    let x = input.data();
    let (mean, inv_std): (Vec<T>, Vec<T>) = match mode {
        Mode::Train => {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for bi in 0..b {
                for ch in 0..c {
                    let seg = &x[(bi * c + ch) * s..(bi * c + ch + 1) * s];
                    mean[ch] = mean[ch] + seg.iter().copied().sum::<T>();
                }
            }
            mean.iter_mut().for_each(|m| *m = *m / nt);
            for bi in 0..b {
                for ch in 0..c {
                    let seg = &x[(bi * c + ch) * s..(bi * c + ch + 1) * s];
                    let m = mean[ch];
                    var[ch] = var[ch] + seg.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
                }
            }
            var.iter_mut().for_each(|v| *v = *v / nt);
            let mo = lit::<T>(cfg.momentum);
            let unbias = nt / T::from_usize(n - 1).unwrap();
            for ch in 0..c {
                stats.mean[ch] = (T::one() - mo) * stats.mean[ch] + mo * mean[ch];
                stats.var[ch] = (T::one() - mo) * stats.var[ch] + mo * var[ch] * unbias;
            }
            let inv = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            (mean, inv)
        }
        Mode::Eval => (
            stats.mean.clone(),
            stats.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect(),
        ),
    };
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * s;
            let (m, is, gm, bt) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for k in base..base + s {
                let xh = (x[k] - m) * is;
                xhat[k] = xh;
                out[k] = gm * xh + bt;
            }
        }
    }
    let (xc, gc, bc) = (input.clone(), gamma.clone(), beta.clone());
    Ok(Tensor::from_op("batch_norm", out, input.shape().to_vec(), &[input, gamma, beta], move |g| {
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        let mut sum_dxh = vec![T::zero(); c];
        let mut sum_dxh_xh = vec![T::zero(); c];
        for bi in 0..b {
            for ch in 0..c {
                let base = (bi * c + ch) * s;
                let gm = gc.data()[ch];
                for k in base..base + s {
                    dgamma[ch] = dgamma[ch] + g[k] * xhat[k];
                    dbeta[ch] = dbeta[ch] + g[k];
                    let dxh = g[k] * gm;
                    sum_dxh[ch] = sum_dxh[ch] + dxh;
                    sum_dxh_xh[ch] = sum_dxh_xh[ch] + dxh * xhat[k];
                }
            }
        }
        let dx = xc.requires_grad().then(|| {
            let mut dx = vec![T::zero(); xhat.len()];
            for bi in 0..b {
                for ch in 0..c {
                    let base = (bi * c + ch) * s;
                    let (gm, is) = (gc.data()[ch], inv_std[ch]);
                    for k in base..base + s {
                        let dxh = g[k] * gm;
                        dx[k] = match mode {
                            Mode::Train => {
                                is * (dxh - sum_dxh[ch] / nt - xhat[k] * sum_dxh_xh[ch] / nt)
                            }
                            Mode::Eval => dxh * is,
                        };
                    }
                }
            }
            dx
        });
        vec![dx, gc.requires_grad().then_some(dgamma), bc.requires_grad().then_some(dbeta)]
    }))
}

/// Normalizes over the last axis, then applies `gamma`/`beta`.
pub fn layer_norm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let d = *input.shape().last().expect("rank >= 1");
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::dim(
            "layer_norm",
            format!("affine {:?}/{:?} for feature size {d}", gamma.shape(), beta.shape()),
        ));
    }
    let rows = input.numel() / d;
    let dt = T::from_usize(d).unwrap();
    let eps = lit::<T>(eps);
    let x = input.data();
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); rows];
    let mut out = vec![T::zero(); x.len()];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let m = row.iter().copied().sum::<T>() / dt;
        let v = row.iter().map(|&a| (a - m) * (a - m)).sum::<T>() / dt;
        let is = T::one() / (v + eps).sqrt();
        inv_std[r] = is;
        for k in 0..d {
            let xh = (row[k] - m) * is;
            xhat[r * d + k] = xh;
            out[r * d + k] = gamma.data()[k] * xh + beta.data()[k];
        }
    }
    let (xc, gc, bc) = (input.clone(), gamma.clone(), beta.clone());
    Ok(Tensor::from_op("layer_norm", out, input.shape().to_vec(), &[input, gamma, beta], move |g| {
        let mut dgamma = vec![T::zero(); d];
        let mut dbeta = vec![T::zero(); d];
        let mut dx = vec![T::zero(); xhat.len()];
        for r in 0..rows {
            let (gr, xr) = (&g[r * d..(r + 1) * d], &xhat[r * d..(r + 1) * d]);
            let mut s1 = T::zero();
            let mut s2 = T::zero();
            for k in 0..d {
                dgamma[k] = dgamma[k] + gr[k] * xr[k];
                dbeta[k] = dbeta[k] + gr[k];
                let dxh = gr[k] * gc.data()[k];
                s1 = s1 + dxh;
                s2 = s2 + dxh * xr[k];
            }
            for k in 0..d {
                let dxh = gr[k] * gc.data()[k];
                dx[r * d + k] = inv_std[r] * (dxh - s1 / dt - xr[k] * s2 / dt);
            }
        }
        vec![
            xc.requires_grad().then_some(dx),
            gc.requires_grad().then_some(dgamma),
            bc.requires_grad().then_some(dbeta),
        ]
    }))
}

/// Inverted dropout: in train mode each entry is zeroed with probability `p`
/// and survivors are scaled by `1 / (1 - p)`; eval mode is the identity.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(input.clone());
    }
    let keep = lit::<T>(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..input.numel())
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok(Tensor::from_op("dropout", data, input.shape().to_vec(), &[input], move |g| {
        vec![Some(g.iter().zip(&mask).map(|(&a, &m)| a * m).collect())]
    }))
}

/// ELU with `alpha = 1`.
pub fn elu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.unary(
        "elu",
        |v| if v > T::zero() { v } else { v.exp_m1() },
        |v, y| if v > T::zero() { T::one() } else { y + T::one() },
    )
}

pub fn tanh_act<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.unary("tanh", |v| v.tanh(), |_, y| T::one() - y * y)
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.unary("sigmoid", sigmoid_scalar, |_, y| y * (T::one() - y))
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax_rows<T: Scalar>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
        let s: T = e.iter().copied().sum();
        out.extend(e.into_iter().map(|v| v / s));
    }
    out
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    if logits.ndim() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::dim(
            "softmax_cross_entropy",
            format!("logits {:?} for {} labels", logits.shape(), labels.len()),
        ));
    }
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::Data(format!("label {l} of row {i} outside [0, {k})")));
    }
    let mut loss = T::zero();
    for (row, &l) in logits.data().chunks_exact(k).zip(labels) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
        loss = loss + (lse - row[l]);
    }
    let bt = T::from_usize(b).unwrap();
    let probs = softmax_rows(logits.data(), k);
    let labels = labels.to_vec();
    Ok(Tensor::from_op("softmax_cross_entropy", vec![loss / bt], vec![1], &[logits], move |g| {
        let scale = g[0] / bt;
        let mut d = probs.clone();
        for (i, &l) in labels.iter().enumerate() {
            d[i * k + l] = d[i * k + l] - T::one();
        }
        d.iter_mut().for_each(|v| *v = *v * scale);
        vec![Some(d)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(data: &[f64], shape: &[usize]) -> Tensor<f64> {
        Tensor::from_vec(data.to_vec(), shape).unwrap()
    }

    #[test]
    fn conv_single_dot_product() {
        let x = t(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]);
        let k = t(&[1.0, 0.0, 0.0, 1.0], &[1, 1, 2, 2]);
        let y = conv2d(&x, &k, None).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = t(&[1.0, -2.0, 3.0, 4.5, 5.0, 6.0], &[1, 1, 2, 3]);
        let k = t(&[1.0], &[1, 1, 1, 1]);
        let b = t(&[0.0], &[1]);
        assert_eq!(conv2d(&x, &k, Some(&b)).unwrap().data(), x.data());
    }

    #[test]
    fn conv_spatial_shape() {
        let shape = conv2d_output_shape(&[1, 1, 22, 1000], &[40, 1, 22, 1]).unwrap();
        assert_eq!(shape, [1, 40, 1, 1000]);
        assert!(matches!(
            conv2d_output_shape(&[1, 2, 22, 1000], &[40, 1, 22, 1]),
            Err(Error::Dimension { .. })
        ));
        assert!(conv2d_output_shape(&[1, 1, 4, 4], &[1, 1, 5, 1]).is_err());
    }

    #[test]
    fn avg_pool_cases() {
        assert_eq!(pooled_len(969, 48, 32), Some(29));
        let x = t(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 1, 4]);
        assert_eq!(avg_pool2d(&x, (1, 2), (1, 2)).unwrap().data(), &[1.5, 3.5]);
        let c = Tensor::<f64>::full(&[2, 3, 1, 100], 7.25);
        let y = avg_pool2d(&c, (1, 48), (1, 32)).unwrap();
        assert!(y.data().iter().all(|&v| (v - 7.25).abs() < 1e-12));
        assert!(avg_pool2d(&x, (1, 5), (1, 1)).is_err());
    }

    #[test]
    fn adaptive_pool_cases() {
        let x = t(&[1.0, 2.0, 3.0, 5.0], &[1, 4]);
        assert_eq!(adaptive_avg_pool(&x, 1).unwrap().data(), &[2.75]);
        let ramp: Vec<f64> = (0..32).map(f64::from).collect();
        let y = adaptive_avg_pool(&t(&ramp, &[32]), 16).unwrap();
        let want: Vec<f64> = (0..16).map(|i| 2.0 * i as f64 + 0.5).collect();
        assert_eq!(y.data(), &want[..]);
        assert!(adaptive_avg_pool(&x, 5).is_err());
    }

    #[test]
    fn adaptive_pool_29_to_16_matches_enumeration() {
        let vals: Vec<f64> = (0..29).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = adaptive_avg_pool(&t(&vals, &[29]), 16).unwrap();
        for i in 0..16 {
            let (lo, hi) = ((i * 29) / 16, ((i + 1) * 29) / 16);
            let brute: f64 = vals[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            assert!((y.data()[i] - brute).abs() < 1e-14);
        }
    }

    #[test]
    fn batch_norm_two_point() {
        let x = t(&[1.0, 3.0], &[2, 1]);
        let mut st = RunningStats::new(1);
        let cfg = BatchNormConfig { eps: 0.0, momentum: 0.1 };
        let y = batch_norm(&x, &t(&[1.0], &[1]), &t(&[0.0], &[1]), &mut st, Mode::Train, cfg).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
        assert!((st.mean[0] - 0.2).abs() < 1e-12);
        assert!((st.var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_zero_and_eval_identity() {
        let mut st = RunningStats::new(2);
        let (g, b) = (t(&[1.0, 1.0], &[2]), t(&[0.0, 0.0], &[2]));
        let z = Tensor::<f64>::zeros(&[3, 2, 5]);
        let y = batch_norm(&z, &g, &b, &mut st, Mode::Train, BatchNormConfig::default()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let mut fresh = RunningStats::new(2);
        let x = t(&[0.5, -1.0, 2.0, 4.0], &[1, 2, 2]);
        let cfg = BatchNormConfig { eps: 0.0, momentum: 0.1 };
        let y = batch_norm(&x, &g, &b, &mut fresh, Mode::Eval, cfg).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn batch_norm_rejects_single_trial_batch() {
        let mut st = RunningStats::new(1);
        let x = t(&[1.0], &[1, 1]);
        let r = batch_norm(&x, &t(&[1.0], &[1]), &t(&[0.0], &[1]), &mut st, Mode::Train, BatchNormConfig::default());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn layer_norm_cases() {
        let (g, b) = (t(&[1.0, 1.0], &[2]), t(&[0.0, 0.0], &[2]));
        assert_eq!(layer_norm(&Tensor::zeros(&[2]), &g, &b, 1e-5).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(layer_norm(&t(&[1.0, 3.0], &[2]), &g, &b, 0.0).unwrap().data(), &[-1.0, 1.0]);
    }

    #[test]
    fn layer_norm_statistics() {
        let x: Vec<f64> = (0..8).map(|i| (i as f64 * 1.3).cos() * 4.0 + 1.0).collect();
        let gamma = [0.5, 2.0, 1.0, 1.5, 0.7, 1.1, 0.9, 1.3];
        let beta = [0.1, -0.2, 0.3, 0.0, 0.5, -0.4, 0.2, 0.1];
        let y = layer_norm(&t(&x, &[8]), &t(&gamma, &[8]), &t(&beta, &[8]), 1e-5).unwrap();
        // Recover the standardized values and check zero mean / unit variance.
        let xh: Vec<f64> = (0..8).map(|k| (y.data()[k] - beta[k]) / gamma[k]).collect();
        let m: f64 = xh.iter().sum::<f64>() / 8.0;
        let v: f64 = xh.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 8.0;
        assert!(m.abs() < 1e-10);
        assert!((v - 1.0).abs() < 1e-5);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::full(&[10], 2.0);
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap().data(), x.data());
        assert_eq!(dropout(&x, 0.9, Mode::Eval, &mut rng).unwrap().data(), x.data());
        assert!(matches!(dropout(&x, 1.0, Mode::Train, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        let vals: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64 * 0.25).collect();
        let x = Tensor::from_vec(vals.clone(), &[n]).unwrap();
        let y = dropout(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let mi = vals.iter().sum::<f64>() / n as f64;
        let mo = y.data().iter().sum::<f64>() / n as f64;
        assert!(((mo - mi) / mi).abs() < 0.01, "{mo} vs {mi}");
        assert!(y.data().iter().all(|&v| v == 0.0 || vals.contains(&(v / 2.0))));
    }

    #[test]
    fn elu_values() {
        let y = elu(&t(&[0.0, 1.0, -1.0, -60.0], &[4]));
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[1], 1.0);
        assert!((y.data()[2] - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        assert!((y.data()[2] + 0.632_120_558_8).abs() < 1e-9);
        assert!((y.data()[3] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn tanh_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..1000).map(|_| rng.random_range(-8.0..8.0)).collect();
        let y = tanh_act(&t(&v, &[1000]));
        assert!(y.data().iter().all(|&a| a > -1.0 && a < 1.0));
    }

    #[test]
    fn cross_entropy_cases() {
        let l = softmax_cross_entropy(&Tensor::<f64>::zeros(&[3, 4]), &[0, 1, 3]).unwrap();
        assert!((l.item() - 4f64.ln()).abs() < 1e-12);
        let dom = t(&[1000.0, 0.0, 0.0, 0.0, 1000.0, 0.0], &[2, 3]);
        assert!(softmax_cross_entropy(&dom, &[0, 1]).unwrap().item() < 1e-12);
        assert!(matches!(
            softmax_cross_entropy(&dom, &[0, 3]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let logits = Tensor::<f64>::parameter(vec![0.2, -1.0, 0.7, 1.5, 0.0, -0.3], &[2, 3]).unwrap();
        softmax_cross_entropy(&logits, &[2, 0]).unwrap().backward().unwrap();
        let p = softmax_rows(logits.data(), 3);
        let g = logits.grad().unwrap();
        let labels = [2usize, 0];
        for i in 0..2 {
            for j in 0..3 {
                let onehot = if labels[i] == j { 1.0 } else { 0.0 };
                assert!((g[i * 3 + j] - (p[i * 3 + j] - onehot) / 2.0).abs() < 1e-14);
            }
        }
    }
}
