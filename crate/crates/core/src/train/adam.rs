use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment buffers, one per parameter tensor, and the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(sizes: &[usize]) -> Self {
        AdamState {
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of every parameter. `grads[i] = None`
/// leaves parameter `i` and its moments untouched. Non-finite gradients
/// abort before anything is modified.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[Option<&[T]>],
    names: &[String],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    assert_eq!(params.len(), grads.len());
    for (i, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                return Err(Error::Numerical {
                    param: name,
                    detail: format!("gradient element {j} is {}", g[j]),
                });
            }
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (lit::<T>(cfg.beta1), lit::<T>(cfg.beta2));
    let one = T::one();
    let c1 = one - lit::<T>(cfg.beta1.powi(t));
    let c2 = one - lit::<T>(cfg.beta2.powi(t));
    let (lr, eps) = (lit::<T>(cfg.lr), lit::<T>(cfg.eps));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for k in 0..g.len() {
            m[k] = b1 * m[k] + (one - b1) * g[k];
            v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            p[k] = p[k] - lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(theta: &mut Vec<f64>, g: &[f64], st: &mut AdamState<f64>, cfg: &AdamConfig) -> Result<()> {
        let mut p = [theta.as_mut_slice()];
        adam_step(&mut p, &[Some(g)], &["theta".to_string()], st, cfg)
    }

    #[test]
    fn zero_gradient_changes_nothing_but_t() {
        let mut th = vec![1.0, -2.0];
        let mut st = AdamState::new(&[2]);
        step(&mut th, &[0.0, 0.0], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(th, vec![1.0, -2.0]);
        assert_eq!((st.t, st.m[0].clone(), st.v[0].clone()), (1, vec![0.0, 0.0], vec![0.0, 0.0]));
    }

    #[test]
    fn first_step_is_sign_step() {
        let cfg = AdamConfig::default();
        let g = [0.5, -3.0, 1e-3];
        let mut th = vec![0.0; 3];
        step(&mut th, &g, &mut AdamState::new(&[3]), &cfg).unwrap();
        for (t, g) in th.iter().zip(g) {
            let want = -cfg.lr * g / (g.abs() + cfg.eps);
            assert!((t - want).abs() < 1e-15, "{t} vs {want}");
        }
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut th = vec![1.0];
        let mut st = AdamState::new(&[1]);
        let mut prev = 1.0f64;
        let mut crossed = false;
        // scalar oracle: plain recurrence in f64
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 1.0f64);
        for t in 1..=50 {
            let g = 2.0 * th[0];
            step(&mut th, &[g], &mut st, &cfg).unwrap();
            let go = 2.0 * x;
            m = 0.9 * m + 0.1 * go;
            v = 0.999 * v + 0.001 * go * go;
            x -= 0.1 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            assert!((th[0] - x).abs() < 1e-12);
            // momentum overshoots zero, so |theta| is monotone only on the approach
            crossed |= th[0] < 0.0;
            if !crossed {
                assert!(th[0].abs() < prev, "step {t}");
            }
            prev = th[0].abs();
        }
        assert!(th[0].abs() < 0.5);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut th = vec![1.0, 2.0];
        let mut st = AdamState::new(&[2]);
        let err = step(&mut th, &[0.0, f64::NAN], &mut st, &AdamConfig::default()).unwrap_err();
        match err {
            Error::Numerical { param, .. } => assert_eq!(param, "theta"),
            e => panic!("{e}"),
        }
        assert_eq!((th, st.t), (vec![1.0, 2.0], 0));
    }
}
