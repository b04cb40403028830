//! Central finite-difference checking of reverse-mode gradients.
//!
//! Only forward evaluations of `f` are used to build the numerical
//! reference, so the check is independent of any backward closure.

use rand::seq::index::sample;
use rand::Rng;

use super::{no_grad, Tensor};
use crate::error::Result;

/// Denominator floor of the relative error, so that coordinates whose true
/// derivative is ~0 are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input index, coordinate)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coords: usize,
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR)
}

/// Compares `d f / d inputs` from one backward pass against central
/// differences with the given `step`.
///
/// `f` must map the inputs to a one-element tensor deterministically.
/// At most `max_coords` randomly chosen coordinates per input are probed
/// (all of them when the input is smaller).
pub fn check_gradients<F, R>(
    inputs: &[Tensor<f64>],
    f: F,
    step: f64,
    max_coords: usize,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    R: Rng + ?Sized,
{
    let leaves: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|t| Tensor::parameter(t.to_vec(), t.shape()))
        .collect::<Result<_>>()?;
    f(&leaves)?.backward()?;
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coords: 0,
    };
    let _guard = no_grad();
    for (pi, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let n = leaf.numel();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            let mut c = sample(rng, n, max_coords).into_vec();
            c.sort_unstable();
            c
        };
        for &ci in &coords {
            let eval = |delta: f64| -> Result<f64> {
                let shifted: Vec<Tensor<f64>> = leaves
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let mut d = t.to_vec();
                        if j == pi {
                            d[ci] += delta;
                        }
                        Tensor::from_vec(d, t.shape())
                    })
                    .collect::<Result<_>>()?;
                Ok(f(&shifted)?.item())
            };
            let numeric = (eval(step)? - eval(-step)?) / (2.0 * step);
            let e = rel_err(analytic[ci], numeric);
            report.coords += 1;
            if e > report.max_rel_err || report.coords == 1 {
                report.max_rel_err = e;
                report.worst = (pi, ci);
                report.analytic = analytic[ci];
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
