//! Gated recurrent unit with hand-written backpropagation through time.
//!
//! Gate layout follows the common `(r, z, n)` stacking:
//!
//! ```text
//! r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//! z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
//! n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//! h' = (1 - z) * n + z * h
//! ```

use super::nn::sigmoid_scalar;
use super::{concat, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Weights of one GRU direction: `w_ih: [3H, Din]`, `w_hh: [3H, H]`,
/// `b_ih, b_hh: [3H]`.
#[derive(Debug, Clone)]
pub struct GruWeights<T: Scalar> {
    pub w_ih: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub b_ih: Tensor<T>,
    pub b_hh: Tensor<T>,
}

impl<T: Scalar> GruWeights<T> {
    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[1]
    }

    fn check(&self, din: usize) -> Result<usize> {
        let h = self.w_hh.shape().get(1).copied().unwrap_or(0);
        let ok = self.w_ih.shape() == [3 * h, din]
            && self.w_hh.shape() == [3 * h, h]
            && self.b_ih.shape() == [3 * h]
            && self.b_hh.shape() == [3 * h];
        if !ok {
            return Err(Error::dim(
                "gru",
                format!(
                    "weights w_ih {:?}, w_hh {:?}, b_ih {:?}, b_hh {:?} inconsistent with input size {din}",
                    self.w_ih.shape(),
                    self.w_hh.shape(),
                    self.b_ih.shape(),
                    self.b_hh.shape()
                ),
            ));
        }
        Ok(h)
    }
}

/// `out[:, :, :] = row-block-wise  a [rows, k] x w^T` with `w: [n, k]`, plus `bias`.
fn affine_rows<T: Scalar>(a: &[T], rows: usize, k: usize, w: &[T], n: usize, bias: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * n);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    T::gemm(rows, k, n, T::one(), a, k as isize, 1, w, 1, k as isize, T::one(), &mut out, n as isize, 1);
    out
}

/// Runs one direction over `x: [B, L, Din]` from a zero initial state and
/// returns every hidden state, `[B, L, H]`, indexed by input position.
pub fn gru_direction<T: Scalar>(x: &Tensor<T>, w: &GruWeights<T>, reverse: bool) -> Result<Tensor<T>> {
    if x.ndim() != 3 {
        return Err(Error::dim("gru", format!("expected [B, L, Din], got {:?}", x.shape())));
    }
    let (b, l, din) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let h = w.check(din)?;
    let g3 = 3 * h;
    let gi = affine_rows(x.data(), b * l, din, w.w_ih.data(), g3, w.b_ih.data());
    let mut out = vec![T::zero(); b * l * h];
    let mut r_s = vec![T::zero(); b * l * h];
    let mut z_s = vec![T::zero(); b * l * h];
    let mut n_s = vec![T::zero(); b * l * h];
    let mut ghn_s = vec![T::zero(); b * l * h];
    let mut hprev_s = vec![T::zero(); b * l * h];
    let mut hcur = vec![T::zero(); b * h];
    for s in 0..l {
        let t = if reverse { l - 1 - s } else { s };
        let gh = affine_rows(&hcur, b, h, w.w_hh.data(), g3, w.b_hh.data());
        for bi in 0..b {
            let gi_row = &gi[(bi * l + t) * g3..(bi * l + t + 1) * g3];
            let gh_row = &gh[bi * g3..(bi + 1) * g3];
            let base = (bi * l + t) * h;
            for j in 0..h {
                let hp = hcur[bi * h + j];
                let r = sigmoid_scalar(gi_row[j] + gh_row[j]);
                let z = sigmoid_scalar(gi_row[h + j] + gh_row[h + j]);
                let ghn = gh_row[2 * h + j];
                let n = (gi_row[2 * h + j] + r * ghn).tanh();
                let hn = (T::one() - z) * n + z * hp;
                r_s[base + j] = r;
                z_s[base + j] = z;
                n_s[base + j] = n;
                ghn_s[base + j] = ghn;
                hprev_s[base + j] = hp;
                out[base + j] = hn;
            }
        }
        for bi in 0..b {
            let base = (bi * l + t) * h;
            hcur[bi * h..(bi + 1) * h].copy_from_slice(&out[base..base + h]);
        }
    }
    let xc = x.clone();
    let wc = w.clone();
    let inputs = [x, &w.w_ih, &w.w_hh, &w.b_ih, &w.b_hh];
    Ok(Tensor::from_op("gru", out, vec![b, l, h], &inputs, move |g| {
        let mut dgi = vec![T::zero(); b * l * g3];
        let mut dw_hh = vec![T::zero(); g3 * h];
        let mut db_hh = vec![T::zero(); g3];
        let mut dh_next = vec![T::zero(); b * h];
        let mut dgh = vec![T::zero(); b * g3];
        let mut hprev_step = vec![T::zero(); b * h];
        for s in (0..l).rev() {
            let t = if reverse { l - 1 - s } else { s };
            let mut dh_prev = vec![T::zero(); b * h];
            for bi in 0..b {
                let base = (bi * l + t) * h;
                for j in 0..h {
                    let k = base + j;
                    let dh = g[k] + dh_next[bi * h + j];
                    let (r, z, n, ghn, hp) = (r_s[k], z_s[k], n_s[k], ghn_s[k], hprev_s[k]);
                    let dn_pre = dh * (T::one() - z) * (T::one() - n * n);
                    let dz_pre = dh * (hp - n) * z * (T::one() - z);
                    let dr_pre = dn_pre * ghn * r * (T::one() - r);
                    let gbase = (bi * l + t) * g3;
                    dgi[gbase + j] = dr_pre;
                    dgi[gbase + h + j] = dz_pre;
                    dgi[gbase + 2 * h + j] = dn_pre;
                    dgh[bi * g3 + j] = dr_pre;
                    dgh[bi * g3 + h + j] = dz_pre;
                    dgh[bi * g3 + 2 * h + j] = dn_pre * r;
                    dh_prev[bi * h + j] = dh * z;
                    hprev_step[bi * h + j] = hp;
                }
            }
            // dW_hh += dgh^T [3H, B] x h_prev [B, H]
            T::gemm(g3, b, h, T::one(), &dgh, 1, g3 as isize, &hprev_step, h as isize, 1, T::one(), &mut dw_hh, h as isize, 1);
            for row in dgh.chunks_exact(g3) {
                db_hh.iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
            }
            // dh_prev += dgh [B, 3H] x W_hh [3H, H]
            T::gemm(b, g3, h, T::one(), &dgh, g3 as isize, 1, wc.w_hh.data(), h as isize, 1, T::one(), &mut dh_prev, h as isize, 1);
            dh_next = dh_prev;
        }
        let rows = b * l;
        let dx = xc.requires_grad().then(|| {
            let mut d = vec![T::zero(); rows * din];
            T::gemm(rows, g3, din, T::one(), &dgi, g3 as isize, 1, wc.w_ih.data(), din as isize, 1, T::zero(), &mut d, din as isize, 1);
            d
        });
        let dw_ih = wc.w_ih.requires_grad().then(|| {
            let mut d = vec![T::zero(); g3 * din];
            T::gemm(g3, rows, din, T::one(), &dgi, 1, g3 as isize, xc.data(), din as isize, 1, T::zero(), &mut d, din as isize, 1);
            d
        });
        let db_ih = wc.b_ih.requires_grad().then(|| {
            let mut d = vec![T::zero(); g3];
            for row in dgi.chunks_exact(g3) {
                d.iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
            }
            d
        });
        vec![
            dx,
            dw_ih,
            wc.w_hh.requires_grad().then_some(dw_hh),
            db_ih,
            wc.b_hh.requires_grad().then_some(db_hh),
        ]
    }))
}

/// Bidirectional GRU: `[B, L, Din] -> [B, L, 2H]`, forward states first.
pub fn bigru<T: Scalar>(x: &Tensor<T>, forward: &GruWeights<T>, backward: &GruWeights<T>) -> Result<Tensor<T>> {
    if x.ndim() == 3 && x.shape()[1] == 0 {
        return Err(Error::dim("bigru", "empty sequence"));
    }
    let f = gru_direction(x, forward, false)?;
    let b = gru_direction(x, backward, true)?;
    concat(&[&f, &b], 2)
}
