//! Shape manipulation, elementwise arithmetic with broadcasting, reductions
//! and dense products.

use super::{numel, strides, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

impl<T: Scalar> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::dim(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape()),
            ));
        }
        Ok(Tensor::from_op("reshape", self.to_vec(), shape.to_vec(), &[self], |g| {
            vec![Some(g.to_vec())]
        }))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::dim(
                "permute",
                format!("{axes:?} is not a permutation of {nd} axes"),
            ));
        }
        let in_strides = strides(self.shape());
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let index = gather_index(&out_shape, &src_strides);
        let x = self.data();
        let data = index.iter().map(|&i| x[i]).collect();
        let n = self.numel();
        Ok(Tensor::from_op("permute", data, out_shape, &[self], move |g| {
            let mut dx = vec![T::zero(); n];
            for (&i, &gv) in index.iter().zip(g) {
                dx[i] = gv;
            }
            vec![Some(dx)]
        }))
    }

    pub fn sum(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op("sum", vec![s], vec![1], &[self], move |g| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel();
        let inv = T::one() / T::from_usize(n).unwrap();
        let s: T = self.data().iter().copied().sum();
        Tensor::from_op("mean", vec![s * inv], vec![1], &[self], move |g| {
            vec![Some(vec![g[0] * inv; n])]
        })
    }

    pub fn scale(&self, factor: f64) -> Tensor<T> {
        let k = T::from_f64(factor).unwrap();
        let data = self.data().iter().map(|&v| v * k).collect();
        Tensor::from_op("scale", data, self.shape().to_vec(), &[self], move |g| {
            vec![Some(g.iter().map(|&v| v * k).collect())]
        })
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        let k = T::from_f64(c).unwrap();
        let data = self.data().iter().map(|&v| v + k).collect();
        Tensor::from_op("add_scalar", data, self.shape().to_vec(), &[self], |g| {
            vec![Some(g.to_vec())]
        })
    }

    /// Flattens every axis after the first.
    pub fn flatten_from(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.ndim() {
            return Err(Error::dim("flatten", format!("axis {axis} for rank {}", self.ndim())));
        }
        let mut shape = self.shape()[..axis].to_vec();
        shape.push(self.shape()[axis..].iter().product());
        self.reshape(&shape)
    }

    /// Applies `f` elementwise; `df(x, y)` gives the local derivative from the
    /// input value and the output value.
    pub(crate) fn unary(
        &self,
        op: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + Send + Sync + 'static,
    ) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&v| f(v)).collect();
        let x = self.clone();
        let y = data.clone();
        Tensor::from_op(op, data, self.shape().to_vec(), &[self], move |g| {
            let dx = g
                .iter()
                .zip(x.data())
                .zip(&y)
                .map(|((&gv, &xv), &yv)| gv * df(xv, yv))
                .collect();
            vec![Some(dx)]
        })
    }
}

/// Linear source offsets for every output position of a strided view.
fn gather_index(out_shape: &[usize], src_strides: &[usize]) -> Vec<usize> {
    let n = numel(out_shape);
    let nd = out_shape.len();
    let mut index = Vec::with_capacity(n);
    let mut counter = vec![0usize; nd];
    let mut offset = 0usize;
    for _ in 0..n {
        index.push(offset);
        for ax in (0..nd).rev() {
            counter[ax] += 1;
            offset += src_strides[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * out_shape[ax];
            counter[ax] = 0;
        }
    }
    index
}

/// Output shape and per-output source offsets for a same-rank broadcast.
fn broadcast(
    op: &'static str,
    a: &[usize],
    b: &[usize],
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if a.len() != b.len() {
        return Err(Error::dim(op, format!("rank mismatch {a:?} vs {b:?}")));
    }
    let mut out = Vec::with_capacity(a.len());
    for (ax, (&da, &db)) in a.iter().zip(b).enumerate() {
        out.push(match (da, db) {
            _ if da == db => da,
            (1, _) => db,
            (_, 1) => da,
            _ => {
                return Err(Error::dim(
                    op,
                    format!("axis {ax}: {da} vs {db} in {a:?} and {b:?}"),
                ))
            }
        });
    }
    let sa = strides(a);
    let sb = strides(b);
    let bsa: Vec<usize> = (0..a.len()).map(|i| if a[i] == 1 { 0 } else { sa[i] }).collect();
    let bsb: Vec<usize> = (0..b.len()).map(|i| if b[i] == 1 { 0 } else { sb[i] }).collect();
    let ia = gather_index(&out, &bsa);
    let ib = gather_index(&out, &bsb);
    Ok((out, ia, ib))
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

fn binary<T: Scalar>(kind: Binary, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let op = match kind {
        Binary::Add => "add",
        Binary::Sub => "sub",
        Binary::Mul => "mul",
    };
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
            })
            .collect();
        let (ac, bc) = (a.clone(), b.clone());
        return Ok(Tensor::from_op(op, data, a.shape().to_vec(), &[a, b], move |g| {
            match kind {
                Binary::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
                Binary::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())],
                Binary::Mul => vec![
                    ac.requires_grad()
                        .then(|| g.iter().zip(bc.data()).map(|(&gv, &y)| gv * y).collect()),
                    bc.requires_grad()
                        .then(|| g.iter().zip(ac.data()).map(|(&gv, &x)| gv * x).collect()),
                ],
            }
        }));
    }
    let (out_shape, ia, ib) = broadcast(op, a.shape(), b.shape())?;
    let (xa, xb) = (a.data(), b.data());
    let data = ia
        .iter()
        .zip(&ib)
        .map(|(&i, &j)| match kind {
            Binary::Add => xa[i] + xb[j],
            Binary::Sub => xa[i] - xb[j],
            Binary::Mul => xa[i] * xb[j],
        })
        .collect();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(op, data, out_shape, &[a, b], move |g| {
        let mut da = ac.requires_grad().then(|| vec![T::zero(); ac.numel()]);
        let mut db = bc.requires_grad().then(|| vec![T::zero(); bc.numel()]);
        for (k, &gv) in g.iter().enumerate() {
            let (i, j) = (ia[k], ib[k]);
            let (ga, gb) = match kind {
                Binary::Add => (gv, gv),
                Binary::Sub => (gv, -gv),
                Binary::Mul => (gv * bc.data()[j], gv * ac.data()[i]),
            };
            if let Some(d) = da.as_mut() {
                d[i] = d[i] + ga;
            }
            if let Some(d) = db.as_mut() {
                d[j] = d[j] + gb;
            }
        }
        vec![da, db]
    }))
}

/// Elementwise sum; same-rank broadcasting over unit axes.
pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(Binary::Add, a, b)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(Binary::Sub, a, b)
}

/// Elementwise (Hadamard) product; same-rank broadcasting over unit axes.
pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(Binary::Mul, a, b)
}

/// Joins tensors along `axis`; all other extents must agree.
pub fn concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::Usage("concat of nothing".into()))?;
    let nd = first.ndim();
    if axis >= nd {
        return Err(Error::dim("concat", format!("axis {axis} for rank {nd}")));
    }
    for p in parts {
        let ok = p.ndim() == nd
            && (0..nd).all(|i| i == axis || p.shape()[i] == first.shape()[i]);
        if !ok {
            return Err(Error::dim(
                "concat",
                format!("{:?} does not match {:?} off axis {axis}", p.shape(), first.shape()),
            ));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(outer * total);
    for o in 0..outer {
        for (p, &w) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total / inner;
    let flags: Vec<bool> = parts.iter().map(|p| p.requires_grad()).collect();
    Ok(Tensor::from_op("concat", data, shape, parts, move |g| {
        let mut grads: Vec<Option<Vec<T>>> = flags
            .iter()
            .zip(&widths)
            .map(|(&f, &w)| f.then(|| Vec::with_capacity(outer * w)))
            .collect();
        let mut pos = 0;
        for _ in 0..outer {
            for (slot, &w) in grads.iter_mut().zip(&widths) {
                if let Some(v) = slot.as_mut() {
                    v.extend_from_slice(&g[pos..pos + w]);
                }
                pos += w;
            }
        }
        grads
    }))
}

/// `[m, k] x [k, n] -> [m, n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::dim(
            "matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![T::zero(); m * n];
    T::gemm(m, k, n, T::one(), a.data(), k as isize, 1, b.data(), n as isize, 1, T::zero(), &mut out, n as isize, 1);
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op("matmul", out, vec![m, n], &[a, b], move |g| {
        let da = ac.requires_grad().then(|| {
            let mut d = vec![T::zero(); m * k];
            // g [m,n] x b^T [n,k]
            T::gemm(m, n, k, T::one(), g, n as isize, 1, bc.data(), 1, n as isize, T::zero(), &mut d, k as isize, 1);
            d
        });
        let db = bc.requires_grad().then(|| {
            let mut d = vec![T::zero(); k * n];
            // a^T [k,m] x g [m,n]
            T::gemm(k, m, n, T::one(), ac.data(), 1, k as isize, g, n as isize, 1, T::zero(), &mut d, n as isize, 1);
            d
        });
        vec![da, db]
    }))
}

/// Affine map along the last axis: `y = x W^T + b` with `W: [out, in]`.
pub fn linear<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let din = *x.shape().last().expect("rank >= 1");
    if weight.ndim() != 2 || weight.shape()[1] != din {
        return Err(Error::dim(
            "linear",
            format!("input {:?} against weight {:?}", x.shape(), weight.shape()),
        ));
    }
    let dout = weight.shape()[0];
    if let Some(b) = bias {
        if b.shape() != [dout] {
            return Err(Error::dim(
                "linear",
                format!("bias {:?} for {dout} outputs", b.shape()),
            ));
        }
    }
    let rows = x.numel() / din;
    let mut out = vec![T::zero(); rows * dout];
    if let Some(b) = bias {
        for r in 0..rows {
            out[r * dout..(r + 1) * dout].copy_from_slice(b.data());
        }
    }
    T::gemm(
        rows, din, dout, T::one(), x.data(), din as isize, 1, weight.data(), 1, din as isize,
        T::one(), &mut out, dout as isize, 1,
    );
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = dout;
    let (xc, wc) = (x.clone(), weight.clone());
    let has_bias = bias.is_some();
    let mut inputs = vec![x, weight];
    if let Some(b) = bias {
        inputs.push(b);
    }
    let bias_grad = bias.map(|b| b.requires_grad()).unwrap_or(false);
    Ok(Tensor::from_op("linear", out, shape, &inputs, move |g| {
        let dx = xc.requires_grad().then(|| {
            let mut d = vec![T::zero(); rows * din];
            T::gemm(rows, dout, din, T::one(), g, dout as isize, 1, wc.data(), din as isize, 1, T::zero(), &mut d, din as isize, 1);
            d
        });
        let dw = wc.requires_grad().then(|| {
            let mut d = vec![T::zero(); dout * din];
            T::gemm(dout, rows, din, T::one(), g, 1, dout as isize, xc.data(), din as isize, 1, T::zero(), &mut d, din as isize, 1);
            d
        });
        let mut grads = vec![dx, dw];
        if has_bias {
            grads.push(bias_grad.then(|| {
                let mut d = vec![T::zero(); dout];
                for row in g.chunks_exact(dout) {
                    d.iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
                }
                d
            }));
        }
        grads
    }))
}
