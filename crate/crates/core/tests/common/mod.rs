//! Shared oracles for the gradient and acceptance suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use staflow::tensor::gradcheck::{check_gradients, GradCheckReport};
use staflow::tensor::{self, BatchNormConfig, GruWeights, Mode, RunningStats};
use staflow::data::{bandpass_filter, FilterSpec, TrialSet};
use staflow::{ArchConfig, Result, StaFlowNet, Tensor, Variant};

pub const FD_STEP: f64 = 1e-5;
pub const MAX_REL_ERR: f64 = 1e-4;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let v = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_vec(v, shape).unwrap()
}

/// `sum(y * w)` with a fixed random `w`, so every output coordinate carries a
/// distinct cotangent.
pub fn weighted(y: &Tensor<f64>, w_seed: u64) -> Result<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(w_seed);
    let w = rand_tensor(&mut rng, y.shape(), 1.0);
    Ok(tensor::mul(y, &w)?.sum())
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// One named case: inputs plus the scalar function of them.
type Case = (Vec<Tensor<f64>>, Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>);

fn make_case(op: &str, rng: &mut ChaCha8Rng) -> Case {
    let ws: u64 = rng.random();
    match op {
        "add" | "sub" | "mul" => {
            let a_shape = [dims(rng, 1, 3), dims(rng, 1, 4), dims(rng, 1, 4)];
            let mut b_shape = a_shape;
            b_shape[rng.random_range(0..3)] = 1;
            let op = op.to_string();
            (
                vec![rand_tensor(rng, &a_shape, 1.0), rand_tensor(rng, &b_shape, 1.0)],
                Box::new(move |t| {
                    let y = match op.as_str() {
                        "add" => tensor::add(&t[0], &t[1])?,
                        "sub" => tensor::sub(&t[0], &t[1])?,
                        _ => tensor::mul(&t[0], &t[1])?,
                    };
                    weighted(&y, ws)
                }),
            )
        }
        "matmul" => {
            let (m, k, n) = (dims(rng, 1, 4), dims(rng, 1, 5), dims(rng, 1, 4));
            (
                vec![rand_tensor(rng, &[m, k], 1.0), rand_tensor(rng, &[k, n], 1.0)],
                Box::new(move |t| weighted(&tensor::matmul(&t[0], &t[1])?, ws)),
            )
        }
        "linear" => {
            let (b, l, din, dout) = (dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 5), dims(rng, 1, 4));
            (
                vec![
                    rand_tensor(rng, &[b, l, din], 1.0),
                    rand_tensor(rng, &[dout, din], 1.0),
                    rand_tensor(rng, &[dout], 1.0),
                ],
                Box::new(move |t| weighted(&tensor::linear(&t[0], &t[1], Some(&t[2]))?, ws)),
            )
        }
        "permute_concat" => {
            let (a, b, c) = (dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 4));
            (
                vec![rand_tensor(rng, &[a, b, c], 1.0), rand_tensor(rng, &[a, c, 2], 1.0)],
                Box::new(move |t| {
                    let p = t[0].permute(&[0, 2, 1])?;
                    let y = tensor::concat(&[&p, &t[1]], 2)?;
                    weighted(&y.reshape(&[a * c * (b + 2)])?, ws)
                }),
            )
        }
        "conv2d" => {
            let (b, cin, cout) = (dims(rng, 1, 2), dims(rng, 1, 3), dims(rng, 1, 3));
            let (h, w) = (dims(rng, 1, 4), dims(rng, 2, 7));
            let (kh, kw) = (dims(rng, 1, h), dims(rng, 1, w));
            (
                vec![
                    rand_tensor(rng, &[b, cin, h, w], 1.0),
                    rand_tensor(rng, &[cout, cin, kh, kw], 1.0),
                    rand_tensor(rng, &[cout], 1.0),
                ],
                Box::new(move |t| weighted(&tensor::conv2d(&t[0], &t[1], Some(&t[2]))?, ws)),
            )
        }
        "avg_pool2d" => {
            let (b, c, h, w) = (dims(rng, 1, 2), dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 3, 12));
            let (ph, pw) = (dims(rng, 1, h), dims(rng, 1, w));
            let (sh, sw) = (dims(rng, 1, 2), dims(rng, 1, 3));
            (
                vec![rand_tensor(rng, &[b, c, h, w], 1.0)],
                Box::new(move |t| weighted(&tensor::avg_pool2d(&t[0], (ph, pw), (sh, sw))?, ws)),
            )
        }
        "adaptive_avg_pool" => {
            let (r, l) = (dims(rng, 1, 4), dims(rng, 1, 30));
            let target = dims(rng, 1, l);
            (
                vec![rand_tensor(rng, &[r, l], 1.0)],
                Box::new(move |t| weighted(&tensor::adaptive_avg_pool(&t[0], target)?, ws)),
            )
        }
        "batch_norm_train" | "batch_norm_eval" => {
            let (b, c, s) = (dims(rng, 2, 4), dims(rng, 1, 3), dims(rng, 1, 5));
            let mode = if op == "batch_norm_train" { Mode::Train } else { Mode::Eval };
            let mean: Vec<f64> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
            (
                vec![
                    rand_tensor(rng, &[b, c, s], 1.0),
                    rand_tensor(rng, &[c], 1.5),
                    rand_tensor(rng, &[c], 1.0),
                ],
                Box::new(move |t| {
                    let mut st = RunningStats { mean: mean.clone(), var: var.clone() };
                    let y = tensor::batch_norm(&t[0], &t[1], &t[2], &mut st, mode, BatchNormConfig::default())?;
                    weighted(&y, ws)
                }),
            )
        }
        "layer_norm" => {
            let (r, d) = (dims(rng, 1, 4), dims(rng, 2, 6));
            (
                vec![rand_tensor(rng, &[r, d], 1.0), rand_tensor(rng, &[d], 1.5), rand_tensor(rng, &[d], 1.0)],
                Box::new(move |t| weighted(&tensor::layer_norm(&t[0], &t[1], &t[2], 1e-5)?, ws)),
            )
        }
        "elu" | "tanh" | "sigmoid" => {
            let n = dims(rng, 1, 12);
            let op = op.to_string();
            (
                vec![rand_tensor(rng, &[n], 2.0)],
                Box::new(move |t| {
                    let y = match op.as_str() {
                        "elu" => tensor::elu(&t[0]),
                        "tanh" => tensor::tanh_act(&t[0]),
                        _ => tensor::sigmoid(&t[0]),
                    };
                    weighted(&y, ws)
                }),
            )
        }
        "dropout" => {
            let n = dims(rng, 2, 20);
            let p = rng.random_range(0.1..0.7);
            let mask_seed: u64 = rng.random();
            (
                vec![rand_tensor(rng, &[n], 1.0)],
                Box::new(move |t| {
                    let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
                    weighted(&tensor::dropout(&t[0], p, Mode::Train, &mut r)?, ws)
                }),
            )
        }
        "softmax_cross_entropy" => {
            let (b, k) = (dims(rng, 1, 4), dims(rng, 2, 5));
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
            (
                vec![rand_tensor(rng, &[b, k], 3.0)],
                Box::new(move |t| tensor::softmax_cross_entropy(&t[0], &labels)),
            )
        }
        "bigru" => {
            let (b, l, din, h) = (dims(rng, 1, 2), dims(rng, 1, 4), dims(rng, 1, 3), dims(rng, 1, 3));
            let mut v = vec![rand_tensor(rng, &[b, l, din], 1.0)];
            for _ in 0..2 {
                v.push(rand_tensor(rng, &[3 * h, din], 0.8));
                v.push(rand_tensor(rng, &[3 * h, h], 0.8));
                v.push(rand_tensor(rng, &[3 * h], 0.5));
                v.push(rand_tensor(rng, &[3 * h], 0.5));
            }
            (
                v,
                Box::new(move |t| {
                    let fw = GruWeights { w_ih: t[1].clone(), w_hh: t[2].clone(), b_ih: t[3].clone(), b_hh: t[4].clone() };
                    let bw = GruWeights { w_ih: t[5].clone(), w_hh: t[6].clone(), b_ih: t[7].clone(), b_hh: t[8].clone() };
                    weighted(&tensor::bigru(&t[0], &fw, &bw)?, ws)
                }),
            )
        }
        other => panic!("unknown op {other}"),
    }
}

pub const OPS: &[&str] = &[
    "add",
    "sub",
    "mul",
    "matmul",
    "linear",
    "permute_concat",
    "conv2d",
    "avg_pool2d",
    "adaptive_avg_pool",
    "batch_norm_train",
    "batch_norm_eval",
    "layer_norm",
    "elu",
    "tanh",
    "sigmoid",
    "dropout",
    "softmax_cross_entropy",
    "bigru",
];

/// Worst finite-difference report per op over `cases_per_op` random shapes.
pub fn op_gradient_suite(seed: u64, cases_per_op: usize) -> Vec<(&'static str, usize, GradCheckReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    OPS.iter()
        .map(|&op| {
            let mut worst: Option<GradCheckReport> = None;
            for _ in 0..cases_per_op {
                let (inputs, f) = make_case(op, &mut rng);
                let rep = check_gradients(&inputs, &f, FD_STEP, 64, &mut rng)
                    .unwrap_or_else(|e| panic!("{op}: {e}"));
                if worst.is_none_or(|w| rep.max_rel_err > w.max_rel_err) {
                    worst = Some(rep);
                }
            }
            (op, cases_per_op, worst.unwrap())
        })
        .collect()
}

/// Reduced architecture for full-model gradient checks: C=4, T_in=160,
/// D=16, H=8. The shorter kernel and pool keep the flow length (18) above
/// the first pyramid level.
pub fn reduced_arch(variant: Variant) -> ArchConfig {
    ArchConfig {
        n_channels: 4,
        n_timepoints: 160,
        n_classes: 3,
        state_dim: 16,
        spatial_filters: 6,
        temporal_kernel: 8,
        flow_pool_kernel: 16,
        flow_pool_stride: 8,
        gru_hidden: 8,
        mlp_hidden: vec![24, 12],
        encoder_dropout: 0.3,
        head_dropout: 0.2,
        variant,
        ..ArchConfig::default()
    }
}

/// Loss of the full forward pass (train mode, fixed dropout masks) checked
/// against central differences over every parameter tensor.
pub fn model_gradient_case(variant: Variant, seed: u64, coords_per_tensor: usize) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = StaFlowNet::<f64>::new(reduced_arch(variant), &mut rng).unwrap();
    // Nonzero modulation weights so the gate path carries gradient.
    for m in &mut net.params.modulation {
        let w = rand_tensor(&mut rng, m.weight.shape(), 0.3).to_vec();
        m.weight.update_data(|d| d.copy_from_slice(&w));
    }
    let b = 4;
    let x = rand_tensor(&mut rng, &[b, 4, 160], 1.0);
    let labels: Vec<usize> = (0..b).map(|i| i % 3).collect();
    let inputs: Vec<Tensor<f64>> = net.params.named_tensors().into_iter().map(|(_, t)| t.clone()).collect();
    let fwd_seed: u64 = rng.random();
    let f = |ts: &[Tensor<f64>]| -> Result<Tensor<f64>> {
        let mut n = net.clone();
        for (slot, t) in n.params.tensors_mut().into_iter().zip(ts) {
            *slot = t.clone();
        }
        let mut r = ChaCha8Rng::seed_from_u64(fwd_seed);
        let (logits, _) = n.forward(&x, Mode::Train, &mut r, false)?;
        tensor::softmax_cross_entropy(&logits, &labels)
    };
    check_gradients(&inputs, f, FD_STEP, coords_per_tensor, &mut rng).unwrap()
}

/// Steady-state amplitude of the default 4-40 Hz filter for a unit sine at
/// `freq_hz`, read off the FFT bin of a window holding an integer number of
/// cycles, well away from both transients.
pub fn filter_gain_fft(freq_hz: f64, zero_phase: bool) -> f64 {
    use rustfft::{num_complex::Complex, FftPlanner};
    let fs = 250.0;
    let n = 5000;
    let x: Vec<f32> = (0..n).map(|t| (2.0 * std::f64::consts::PI * freq_hz * t as f64 / fs).sin() as f32).collect();
    let set = TrialSet::new(1, n, fs as f32, 1, vec![0], x, None).unwrap();
    let y = bandpass_filter(&set, &FilterSpec::default(), zero_phase).unwrap();
    let (start, len) = (1000, 3000);
    let mut buf: Vec<Complex<f64>> = y.data[start..start + len].iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let bin = (freq_hz * len as f64 / fs).round() as usize;
    2.0 * buf[bin].norm() / len as f64
}

/// Largest |y| after the first two seconds for a constant input of one.
pub fn filter_dc_residual(zero_phase: bool) -> f64 {
    let n = 2500;
    let set = TrialSet::new(1, n, 250.0, 1, vec![0], vec![1.0; n], None).unwrap();
    let y = bandpass_filter(&set, &FilterSpec::default(), zero_phase).unwrap();
    y.data[500..].iter().map(|v| v.abs() as f64).fold(0.0, f64::max)
}

/// Accuracy, kappa and macro F1 counted directly from the label lists.
pub fn brute_metrics(truth: &[usize], pred: &[usize], k: usize) -> (f64, f64, f64) {
    let n = truth.len() as f64;
    let agree = truth.iter().zip(pred).filter(|(t, p)| t == p).count() as f64;
    let po = agree / n;
    let mut pe = 0.0;
    let mut f1 = 0.0;
    for c in 0..k {
        let t_c = truth.iter().filter(|&&t| t == c).count() as f64;
        let p_c = pred.iter().filter(|&&p| p == c).count() as f64;
        pe += (t_c / n) * (p_c / n);
        let tp = truth.iter().zip(pred).filter(|(t, p)| **t == c && **p == c).count() as f64;
        let (fp, fn_) = (p_c - tp, t_c - tp);
        f1 += if tp + fp + fn_ == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
    }
    let kappa = if po == pe || 1.0 - pe == 0.0 { 0.0 } else { (po - pe) / (1.0 - pe) };
    (po, kappa, f1 / k as f64)
}

/// Two-sided signed-rank p by enumerating all `2^n` sign patterns of the
/// non-zero differences, with ranks from a quadratic tie-averaging count.
pub fn wilcoxon_enumerated_p(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    if d.is_empty() {
        return 1.0;
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|x| {
            let below = abs.iter().filter(|y| *y < x).count() as f64;
            let equal = abs.iter().filter(|y| *y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let total: f64 = ranks.iter().sum();
    let obs: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let dev = (obs - total / 2.0).abs();
    let n = d.len();
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if (w - total / 2.0).abs() >= dev - 1e-9 {
            hits += 1;
        }
    }
    (hits as f64 / (1u64 << n) as f64).min(1.0)
}
