//! The `synth`, `train`, `ablate`, `export` and `eval` commands.
//!
//! Each command validates its whole configuration before doing any long work
//! and writes only under `out_dir`. Outputs depend on the config and seeds
//! alone, so reruns are bitwise identical.

mod config;

pub use config::{parse_overrides, RunConfig, SeedSpec};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{bandpass_filter, load_eegb, save_eegb, synth_generate, SynthSpec, TrialSet};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint, write_weights_csv, StaFlowNet};
use crate::scalar::{Precision, Scalar};
use crate::train::{
    check_compatible, evaluate, export_stage_features, multi_seed_run, thread_count, write_history_csv,
    write_stage_csv, Aggregate, MetricsReport, TrainConfig,
};
use config::fail_on;

/// Process exit status for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Usage(_) => 2,
        Error::Data(_) | Error::Format { .. } | Error::Parse { .. } | Error::Dimension { .. } => 3,
        Error::Numerical { .. } => 4,
        Error::Io { .. } | Error::Json(_) => 1,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads an EEGB file and applies the configured bandpass.
fn load_set(cfg: &RunConfig, path: &Path) -> Result<TrialSet> {
    let set = load_eegb(path)?;
    match &cfg.filter {
        Some(f) => {
            f.validate(set.sample_rate_hz as f64)?;
            bandpass_filter(&set, f, cfg.zero_phase)
        }
        None => Ok(set),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProvenance {
    pub spec: SynthSpec,
    pub train_seed: u64,
    pub test_seed: u64,
    pub train_file: PathBuf,
    pub test_file: PathBuf,
}

/// Writes `train.eegb`, `test.eegb` and `synth.json` under `out_dir`. The two
/// sets use independent seeds drawn from `synth.seed`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthProvenance> {
    cfg.synth.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.synth.seed);
    let (train_seed, test_seed) = (rng.next_u64(), rng.next_u64());
    create_dir(&cfg.out_dir)?;
    let prov = SynthProvenance {
        spec: cfg.synth.clone(),
        train_seed,
        test_seed,
        train_file: cfg.out_dir.join("train.eegb"),
        test_file: cfg.out_dir.join("test.eegb"),
    };
    for (seed, path) in [(train_seed, &prov.train_file), (test_seed, &prov.test_file)] {
        let set = synth_generate(&SynthSpec { seed, ..cfg.synth.clone() })?;
        save_eegb(&set, path)?;
    }
    write_json(&cfg.out_dir.join("synth.json"), &prov)?;
    Ok(prov)
}

/// Train and test sets with every data-dependent check done.
fn load_pair(cfg: &RunConfig) -> Result<(TrialSet, TrialSet)> {
    fail_on(cfg.problems(&[("train_file", &cfg.train_file), ("test_file", &cfg.test_file)]))?;
    thread_count()?;
    let train = load_set(cfg, cfg.train_file.as_ref().unwrap())?;
    let test = load_set(cfg, cfg.test_file.as_ref().unwrap())?;
    check_compatible(&train, &test)?;
    fail_on(cfg.train.arch_for(&train).problems())?;
    Ok((train, test))
}

/// Multi-seed training. Writes `checkpoint.sfnc` (the seed with the lowest
/// validation loss), `history_seed<k>.csv` per seed, `metrics.json` and
/// `metrics.txt`.
pub fn cmd_train(cfg: &RunConfig) -> Result<MetricsReport> {
    let (train, test) = load_pair(cfg)?;
    create_dir(&cfg.out_dir)?;
    match cfg.precision {
        Precision::Single => train_impl::<f32>(cfg, &train, &test),
        Precision::Double => train_impl::<f64>(cfg, &train, &test),
    }
}

fn train_impl<T: Scalar>(cfg: &RunConfig, train: &TrialSet, test: &TrialSet) -> Result<MetricsReport> {
    let run = multi_seed_run::<T>(train, test, &cfg.train, &cfg.seed_list(), thread_count()?)?;
    save_checkpoint(&run.runs[run.best].outcome.net, &cfg.checkpoint_path())?;
    for r in &run.runs {
        write_history_csv(&cfg.out_dir.join(format!("history_seed{}.csv", r.seed)), &r.outcome.history)?;
    }
    write_json(&cfg.out_dir.join("metrics.json"), &run.report)?;
    write_text(&cfg.out_dir.join("metrics.txt"), &render_table(std::slice::from_ref(&run.report)))?;
    Ok(run.report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    /// One report per variant; each carries its comparison against the first.
    pub variants: Vec<MetricsReport>,
}

/// Runs every configured variant on the same data and seeds, then tests each
/// against the first variant with the signed-rank test paired by seed.
/// Writes `ablation.json` and `ablation.txt`.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblationReport> {
    if cfg.variants.is_empty() {
        return Err(Error::Config("variants must not be empty".into()));
    }
    let (train, test) = load_pair(cfg)?;
    create_dir(&cfg.out_dir)?;
    let seeds = cfg.seed_list();
    let threads = thread_count()?;
    let mut reports = Vec::with_capacity(cfg.variants.len());
    for &variant in &cfg.variants {
        let tc = TrainConfig { variant, ..cfg.train.clone() };
        let report = match cfg.precision {
            Precision::Single => multi_seed_run::<f32>(&train, &test, &tc, &seeds, threads)?.report,
            Precision::Double => multi_seed_run::<f64>(&train, &test, &tc, &seeds, threads)?.report,
        };
        reports.push(report);
    }
    let reference = reports[0].clone();
    for r in &mut reports {
        r.compare_with(&reference)?;
    }
    let out = AblationReport { seeds, variants: reports };
    write_json(&cfg.out_dir.join("ablation.json"), &out)?;
    write_text(&cfg.out_dir.join("ablation.txt"), &render_table(&out.variants))?;
    Ok(out)
}

fn check_fits<T: Scalar>(net: &StaFlowNet<T>, data: &TrialSet, path: &Path) -> Result<()> {
    let a = &net.arch;
    if a.n_channels != data.n_channels || a.n_timepoints != data.n_samples || a.n_classes != data.n_classes {
        return Err(Error::Data(format!(
            "checkpoint {} expects {} channels x {} samples and {} classes; data has {} x {} and {}",
            path.display(),
            a.n_channels,
            a.n_timepoints,
            a.n_classes,
            data.n_channels,
            data.n_samples,
            data.n_classes
        )));
    }
    Ok(())
}

fn checkpoint_and_data(cfg: &RunConfig, data: &Option<PathBuf>) -> Result<(PathBuf, TrialSet)> {
    let ckpt = Some(cfg.checkpoint_path());
    let mut p = Vec::new();
    for (name, path) in [("checkpoint", &ckpt), ("data_file", data)] {
        match path {
            None => p.push(format!("{name} is required")),
            Some(f) if !f.is_file() => p.push(format!("{name} {} does not exist", f.display())),
            _ => {}
        }
    }
    fail_on(p)?;
    let set = load_set(cfg, data.as_ref().unwrap())?;
    Ok((ckpt.unwrap(), set))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub files: Vec<PathBuf>,
    pub fisher: BTreeMap<String, f64>,
}

/// Spatial weights (`weights_state.csv`, `weights_flow.csv`), one
/// `stage_<name>.csv` per network stage, and `fisher.json`.
pub fn cmd_export(cfg: &RunConfig) -> Result<ExportSummary> {
    let data_file = cfg.data_file.clone().or_else(|| cfg.test_file.clone());
    let (ckpt, data) = checkpoint_and_data(cfg, &data_file)?;
    match cfg.precision {
        Precision::Single => export_impl::<f32>(cfg, &ckpt, &data),
        Precision::Double => export_impl::<f64>(cfg, &ckpt, &data),
    }
}

fn export_impl<T: Scalar>(cfg: &RunConfig, ckpt: &Path, data: &TrialSet) -> Result<ExportSummary> {
    let net = load_checkpoint::<T>(ckpt)?;
    check_fits(&net, data, ckpt)?;
    create_dir(&cfg.out_dir)?;
    let mut files = Vec::new();
    let w = net.params.export_spatial_weights();
    for (name, m) in [("state", &w.state), ("flow", &w.flow)] {
        if let Some(m) = m {
            let p = cfg.out_dir.join(format!("weights_{name}.csv"));
            write_weights_csv(&p, m, data.channel_names.as_deref())?;
            files.push(p);
        }
    }
    let mut fisher = BTreeMap::new();
    for stage in export_stage_features(&net, data)? {
        let p = cfg.out_dir.join(format!("stage_{}.csv", stage.name));
        write_stage_csv(&p, &stage)?;
        files.push(p);
        if let Some(f) = stage.fisher {
            fisher.insert(stage.name.clone(), f);
        }
    }
    let p = cfg.out_dir.join("fisher.json");
    write_json(&p, &fisher)?;
    files.push(p);
    Ok(ExportSummary { files, fisher })
}

/// Scores a saved checkpoint on `test_file`; writes `eval.json` and `eval.txt`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<MetricsReport> {
    let (ckpt, test) = checkpoint_and_data(cfg, &cfg.test_file)?;
    match cfg.precision {
        Precision::Single => eval_impl::<f32>(cfg, &ckpt, &test),
        Precision::Double => eval_impl::<f64>(cfg, &ckpt, &test),
    }
}

fn eval_impl<T: Scalar>(cfg: &RunConfig, ckpt: &Path, test: &TrialSet) -> Result<MetricsReport> {
    let net = load_checkpoint::<T>(ckpt)?;
    check_fits(&net, test, ckpt)?;
    create_dir(&cfg.out_dir)?;
    let per_seed = vec![evaluate(&net, test, cfg.train.seed)?];
    let fisher = export_stage_features(&net, test)?.into_iter().filter_map(|s| s.fisher.map(|f| (s.name, f))).collect();
    let report = MetricsReport {
        variant: net.arch.variant,
        aggregate: Aggregate::over(&per_seed),
        per_seed,
        fisher,
        comparisons: Vec::new(),
    };
    write_json(&cfg.out_dir.join("eval.json"), &report)?;
    write_text(&cfg.out_dir.join("eval.txt"), &render_table(std::slice::from_ref(&report)))?;
    Ok(report)
}

/// Aligned text table: one row per report, mean ± std over seeds, and the
/// signed-rank statistic against the first comparison baseline when present.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let pm = |m: f64, s: f64| format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * s);
    let mut rows = vec![["Variant", "Seeds", "Accuracy (%)", "Kappa (%)", "Macro F1 (%)", "vs", "W", "p"].map(String::from)];
    for r in reports {
        let a = &r.aggregate;
        let (vs, w, p) = match r.comparisons.first() {
            Some(c) => (c.baseline.clone(), format!("{}", c.w), format!("{:.4}", c.p)),
            None => ("-".into(), "-".into(), "-".into()),
        };
        rows.push([
            r.variant.to_string(),
            a.n_seeds.to_string(),
            pm(a.acc_mean, a.acc_std),
            pm(a.kappa_mean, a.kappa_std),
            pm(a.f1_mean, a.f1_std),
            vs,
            w,
            p,
        ]);
    }
    let widths: Vec<usize> = (0..8).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap()).collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, &w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    out
}
