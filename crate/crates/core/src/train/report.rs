use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::StageFeatures;
use crate::error::{csv_err, Error, Result};
use crate::model::Variant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub accuracy: f64,
    pub kappa: f64,
    pub macro_f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

/// Mean and population standard deviation over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_seeds: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub kappa_mean: f64,
    pub kappa_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

impl Aggregate {
    pub fn over(per_seed: &[SeedMetrics]) -> Self {
        let col = |f: fn(&SeedMetrics) -> f64| per_seed.iter().map(f).collect::<Vec<_>>();
        let (acc_mean, acc_std) = mean_std(&col(|s| s.accuracy));
        let (kappa_mean, kappa_std) = mean_std(&col(|s| s.kappa));
        let (f1_mean, f1_std) = mean_std(&col(|s| s.macro_f1));
        Aggregate { n_seeds: per_seed.len(), acc_mean, acc_std, kappa_mean, kappa_std, f1_mean, f1_std }
    }
}

/// Paired signed-rank comparison of this report's per-seed accuracies against
/// a baseline's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    #[serde(rename = "W")]
    pub w: f64,
    pub p: f64,
    pub n: usize,
    pub exact: bool,
    pub all_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: Variant,
    pub per_seed: Vec<SeedMetrics>,
    pub aggregate: Aggregate,
    /// Stage name to Fisher score, for the best-validation seed on the test set.
    pub fisher: BTreeMap<String, f64>,
    pub comparisons: Vec<Comparison>,
}

impl MetricsReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.per_seed.iter().map(|s| s.accuracy).collect()
    }

    /// Adds the comparison of `self` against `baseline` (paired by seed order).
    pub fn compare_with(&mut self, baseline: &MetricsReport) -> Result<()> {
        let r = super::stats::wilcoxon_signed_rank(&self.accuracies(), &baseline.accuracies())?;
        self.comparisons.push(Comparison {
            baseline: baseline.variant.to_string(),
            w: r.w,
            p: r.p,
            n: r.n,
            exact: r.exact,
            all_zero: r.all_zero,
        });
        Ok(())
    }
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in history {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|rec| rec.map_err(|e| csv_err(path, e))).collect()
}

/// Header `f0..f{width-1},label`, one row per trial.
pub fn write_stage_csv(path: &Path, stage: &StageFeatures) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header: Vec<String> = (0..stage.width).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (row, label) in stage.values.chunks_exact(stage.width.max(1)).zip(&stage.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(label.to_string());
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
