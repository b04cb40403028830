//! Classification metrics from a confusion matrix `confusion[true][predicted]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn confusion_matrix(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<Vec<Vec<u64>>> {
    if truth.len() != pred.len() {
        return Err(Error::Data(format!("{} labels vs {} predictions", truth.len(), pred.len())));
    }
    let mut c = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::Data(format!("class {} outside [0, {n_classes})", t.max(p))));
        }
        c[t][p] += 1;
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub kappa: f64,
    pub macro_f1: f64,
}

fn total(c: &[Vec<u64>]) -> u64 {
    c.iter().flatten().sum()
}

pub fn accuracy(c: &[Vec<u64>]) -> f64 {
    let n = total(c);
    if n == 0 {
        return 0.0;
    }
    (0..c.len()).map(|k| c[k][k]).sum::<u64>() as f64 / n as f64
}

/// Cohen's kappa; 0 whenever observed and chance agreement coincide
/// (including the degenerate `p_e = 1`).
pub fn cohen_kappa(c: &[Vec<u64>]) -> f64 {
    let n = total(c) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let po = accuracy(c);
    let pe: f64 = (0..c.len())
        .map(|k| {
            let row: u64 = c[k].iter().sum();
            let col: u64 = c.iter().map(|r| r[k]).sum();
            (row as f64 / n) * (col as f64 / n)
        })
        .sum();
    if po == pe || 1.0 - pe == 0.0 {
        return 0.0;
    }
    (po - pe) / (1.0 - pe)
}

/// Mean over all classes of `2 tp / (2 tp + fp + fn)`; a class with neither
/// instances nor predictions scores 0.
pub fn macro_f1(c: &[Vec<u64>]) -> f64 {
    let k = c.len();
    if k == 0 {
        return 0.0;
    }
    let sum: f64 = (0..k)
        .map(|i| {
            let tp = c[i][i];
            let fn_: u64 = c[i].iter().sum::<u64>() - tp;
            let fp: u64 = c.iter().map(|r| r[i]).sum::<u64>() - tp;
            let den = 2 * tp + fp + fn_;
            if den == 0 {
                0.0
            } else {
                2.0 * tp as f64 / den as f64
            }
        })
        .sum();
    sum / k as f64
}

pub fn class_metrics(c: &[Vec<u64>]) -> ClassMetrics {
    ClassMetrics { accuracy: accuracy(c), kappa: cohen_kappa(c), macro_f1: macro_f1(c) }
}
