//! Wilcoxon signed-rank test and the Fisher separability score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of non-zero differences for which the exact null
/// distribution is used.
pub const EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub w: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Non-zero differences used.
    pub n: usize,
    pub p: f64,
    pub exact: bool,
    /// Every difference was zero; `p` is then 1.
    pub all_zero: bool,
}

/// Average ranks (1-based) of `values`.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided paired test of `a - b`, zero differences dropped.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Usage(format!("paired samples of lengths {} and {}", a.len(), b.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    if d.is_empty() {
        return Ok(WilcoxonResult { w: 0.0, w_plus: 0.0, w_minus: 0.0, n: 0, p: 1.0, exact: true, all_zero: true });
    }
    let n = d.len();
    let ranks = average_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    // `+ 0.0` turns the empty sum (-0.0) into 0.0.
    let w_plus: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum::<f64>() + 0.0;
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let exact = n <= EXACT_MAX_N;
    let p = if exact { exact_p(&ranks, w_plus) } else { normal_p(&ranks, w_plus) };
    Ok(WilcoxonResult { w: w_plus.min(w_minus), w_plus, w_minus, n, p, exact, all_zero: false })
}

/// `P(|W+ - S/2| >= |w+ - S/2|)` under random signs, counting sign
/// assignments by dynamic programming over doubled (integer) ranks.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let r2: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let s: usize = r2.iter().sum();
    let mut counts = vec![0f64; s + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &r2 {
        for v in (0..=reach).rev() {
            if counts[v] != 0.0 {
                counts[v + r] += counts[v];
            }
        }
        reach += r;
    }
    let obs = (w_plus * 2.0).round() as i64;
    let dev = (2 * obs - s as i64).abs();
    let hits: f64 = (0..=s).filter(|&v| (2 * v as i64 - s as i64).abs() >= dev).map(|v| counts[v]).sum();
    (hits / 2f64.powi(ranks.len() as i32)).min(1.0)
}

/// Normal approximation with tie-corrected variance, no continuity correction.
fn normal_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
        let t = j as f64;
        tie += t * t * t - t;
        i += j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = (w_plus - mean) / var.sqrt();
    libm::erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

pub const FISHER_EPS: f64 = 1e-12;

/// `trace(S_B) / (trace(S_W) + eps)` over row-major `features` (`labels.len()`
/// rows). Classes without trials are ignored.
pub fn fisher_score(features: &[f64], labels: &[usize]) -> Result<f64> {
    let n = labels.len();
    if n == 0 || !features.len().is_multiple_of(n) {
        return Err(Error::Data(format!("{} feature values for {n} trials", features.len())));
    }
    let d = features.len() / n;
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; k];
    let mut means = vec![vec![0.0; d]; k];
    let mut grand = vec![0.0; d];
    for (row, &l) in features.chunks_exact(d).zip(labels) {
        counts[l] += 1;
        for j in 0..d {
            means[l][j] += row[j];
            grand[j] += row[j];
        }
    }
    let present: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        return Err(Error::Data("fisher score needs at least two classes".into()));
    }
    if let Some(&c) = present.iter().find(|&&c| counts[c] < 2) {
        return Err(Error::Data(format!("class {c} has a single trial")));
    }
    grand.iter_mut().for_each(|g| *g /= n as f64);
    for &c in &present {
        means[c].iter_mut().for_each(|m| *m /= counts[c] as f64);
    }
    let sb: f64 = present
        .iter()
        .map(|&c| counts[c] as f64 * means[c].iter().zip(&grand).map(|(m, g)| (m - g) * (m - g)).sum::<f64>())
        .sum();
    let sw: f64 = features
        .chunks_exact(d)
        .zip(labels)
        .map(|(row, &l)| row.iter().zip(&means[l]).map(|(x, m)| (x - m) * (x - m)).sum::<f64>())
        .sum();
    Ok(sb / (sw + FISHER_EPS))
}
