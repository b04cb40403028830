//! Training loop, evaluation, multi-seed protocol and reports.

mod adam;
mod config;
pub mod metrics;
mod report;
pub mod stats;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use config::TrainConfig;
pub use metrics::{argmax, class_metrics, confusion_matrix, ClassMetrics};
pub use report::{
    read_history_csv, write_history_csv, write_stage_csv, Aggregate, Comparison, EpochRecord, MetricsReport,
    SeedMetrics,
};
pub use stats::{fisher_score, wilcoxon_signed_rank, WilcoxonResult};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::TrialSet;
use crate::error::{Error, Result};
use crate::model::StaFlowNet;
use crate::scalar::Scalar;
use crate::tensor::{no_grad, softmax_cross_entropy, Mode};

/// Trials per forward pass when no gradients are needed.
const EVAL_CHUNK: usize = 64;

/// Environment variable capping the number of seeds trained concurrently.
pub const THREADS_ENV: &str = "STAFLOW_THREADS";

/// Worker count from `STAFLOW_THREADS` (default 1).
pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_ENV}={s:?} is not a positive integer"))),
        },
    }
}

/// Per-class split: `round(val_fraction * n_c)` trials of each class (at
/// least one, never all) go to validation. Both lists keep ascending order.
pub fn stratified_split<R: Rng + ?Sized>(
    labels: &[usize],
    n_classes: usize,
    val_fraction: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::Data(format!("class {c} has {} trial(s); the validation split needs 2", idx.len())));
        }
        idx.shuffle(rng);
        let k = ((val_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        val.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Shuffled mini-batches; a trailing batch of one trial joins the previous
/// batch, since training-mode batch norm needs two.
pub fn minibatches<R: Rng + ?Sized>(indices: &[usize], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

/// Eval-mode logits for the trials at `indices`, row-major `[len, n_classes]`.
pub fn predict_logits<T: Scalar, R: Rng + ?Sized>(
    net: &StaFlowNet<T>,
    data: &TrialSet,
    indices: &[usize],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let _g = no_grad();
    let mut out = Vec::with_capacity(indices.len() * net.arch.n_classes);
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (logits, _) = net.forward(&data.batch::<T>(chunk), Mode::Eval, rng, false)?;
        out.extend(logits.data().iter().map(|v| v.to_f64().unwrap()));
    }
    Ok(out)
}

/// Mean cross-entropy and accuracy on `indices`.
fn loss_and_accuracy(logits: &[f64], labels: &[usize], k: usize) -> (f64, f64) {
    let mut loss = 0.0;
    let mut hits = 0;
    for (row, &l) in logits.chunks_exact(k).zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
        loss += lse - row[l];
        hits += usize::from(argmax(row) == l);
    }
    let n = labels.len().max(1) as f64;
    (loss / n, hits as f64 / n)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    /// Parameters of the epoch with the lowest validation loss.
    pub net: StaFlowNet<T>,
    pub history: Vec<EpochRecord>,
    /// 1-based.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

fn check_trainable(train: &TrialSet, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    cfg.arch_for(train).validate()?;
    train.validate()?;
    let present = train.class_counts().iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::Data(format!("training data holds {present} class(es); at least 2 are needed")));
    }
    Ok(())
}

/// Mini-batch Adam on cross-entropy with early stopping on validation loss.
pub fn train_model<T: Scalar>(train: &TrialSet, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    check_trainable(train, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (train_idx, val_idx) = stratified_split(&train.labels, train.n_classes, cfg.val_fraction, &mut rng)?;
    if cfg.batch_size > train_idx.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} training trials left after the validation split",
            cfg.batch_size,
            train_idx.len()
        )));
    }
    let mut net = StaFlowNet::<T>::new(cfg.arch_for(train), &mut rng)?;
    let names: Vec<String> = net.params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let sizes: Vec<usize> = net.params.named_tensors().iter().map(|(_, t)| t.numel()).collect();
    let mut adam = AdamState::<T>::new(&sizes);
    let adam_cfg = AdamConfig { lr: cfg.lr, beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.eps };
    let val_labels = train.labels_of(&val_idx);
    let k = net.arch.n_classes;

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, StaFlowNet<T>)> = None;
    for epoch in 1..=cfg.max_epochs {
        let mut loss_sum = 0.0;
        for batch in minibatches(&train_idx, cfg.batch_size, &mut rng) {
            let x = train.batch::<T>(&batch);
            let (logits, _) = net.forward(&x, Mode::Train, &mut rng, false)?;
            let loss = softmax_cross_entropy(&logits, &train.labels_of(&batch))?;
            let lv = loss.item().to_f64().unwrap();
            if !lv.is_finite() {
                return Err(Error::Numerical { param: "loss".into(), detail: format!("epoch {epoch}: loss is {lv}") });
            }
            loss_sum += lv * batch.len() as f64;
            net.params.zero_grad();
            loss.backward()?;
            drop(loss);
            drop(logits);
            let grads: Vec<Option<Vec<T>>> = net.params.named_tensors().iter().map(|(_, t)| t.grad()).collect();
            let grad_refs: Vec<Option<&[T]>> = grads.iter().map(|g| g.as_deref()).collect();
            let mut slices: Vec<&mut [T]> = net.params.tensors_mut().into_iter().map(|t| t.data_mut()).collect();
            adam_step(&mut slices, &grad_refs, &names, &mut adam, &adam_cfg)?;
        }
        net.params.zero_grad();
        let logits = predict_logits(&net, train, &val_idx, &mut rng)?;
        let (val_loss, val_acc) = loss_and_accuracy(&logits, &val_labels, k);
        if !val_loss.is_finite() {
            return Err(Error::Numerical { param: "validation loss".into(), detail: format!("epoch {epoch}: {val_loss}") });
        }
        history.push(EpochRecord { epoch, train_loss: loss_sum / train_idx.len() as f64, val_loss, val_acc });
        match &best {
            Some((b, _, _)) if val_loss >= *b => {}
            _ => best = Some((val_loss, epoch, net.clone())),
        }
        let best_epoch = best.as_ref().unwrap().1;
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    let (best_val_loss, best_epoch, net) = best.expect("at least one epoch");
    Ok(TrainOutcome { net, history, best_epoch, best_val_loss, train_indices: train_idx, val_indices: val_idx })
}

/// Eval-mode metrics over the whole set. `seed` only labels the entry and
/// seeds the noise of the random-state variant.
pub fn evaluate<T: Scalar>(net: &StaFlowNet<T>, test: &TrialSet, seed: u64) -> Result<SeedMetrics> {
    if test.n_classes != net.arch.n_classes {
        return Err(Error::Data(format!(
            "test data has {} classes, model has {}",
            test.n_classes, net.arch.n_classes
        )));
    }
    if test.n_channels != net.arch.n_channels || test.n_samples != net.arch.n_timepoints {
        return Err(Error::Data(format!(
            "test trials are {} x {}, model expects {} x {}",
            test.n_channels, test.n_samples, net.arch.n_channels, net.arch.n_timepoints
        )));
    }
    let all: Vec<usize> = (0..test.n_trials()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e7a1);
    let logits = predict_logits(net, test, &all, &mut rng)?;
    let pred: Vec<usize> = logits.chunks_exact(net.arch.n_classes).map(argmax).collect();
    let confusion = confusion_matrix(&test.labels, &pred, net.arch.n_classes)?;
    let m = class_metrics(&confusion);
    Ok(SeedMetrics { seed, accuracy: m.accuracy, kappa: m.kappa, macro_f1: m.macro_f1, confusion })
}

/// Flattened per-trial representation at one stage of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct StageFeatures {
    pub name: String,
    pub width: usize,
    /// Row-major `[trials, width]`.
    pub values: Vec<f64>,
    pub labels: Vec<usize>,
    /// `None` when the labels do not admit a score (one class, or a class
    /// with a single trial).
    pub fisher: Option<f64>,
}

/// Eval-mode stage features: `state` (when the variant has a state encoder),
/// `flow`, `mod1..modN` and `z` (when it has the flow branch).
pub fn export_stage_features<T: Scalar>(net: &StaFlowNet<T>, data: &TrialSet) -> Result<Vec<StageFeatures>> {
    let _g = no_grad();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut stages: BTreeMap<usize, (String, usize, Vec<f64>)> = BTreeMap::new();
    let all: Vec<usize> = (0..data.n_trials()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let (_, trace) = net.forward(&data.batch::<T>(chunk), Mode::Eval, &mut rng, true)?;
        let tr = trace.expect("trace requested");
        let mut list = Vec::new();
        if net.arch.variant.has_state_encoder() {
            list.push(("state".to_string(), tr.state.clone().expect("state")));
        }
        if let Some(f) = &tr.flow {
            list.push(("flow".to_string(), f.clone()));
            for (i, m) in tr.modulated.iter().enumerate() {
                list.push((format!("mod{}", i + 1), m.clone()));
            }
            list.push(("z".to_string(), tr.z.clone().expect("z")));
        }
        for (pos, (name, t)) in list.into_iter().enumerate() {
            let width = t.numel() / chunk.len();
            let e = stages.entry(pos).or_insert_with(|| (name, width, Vec::new()));
            e.2.extend(t.data().iter().map(|v| v.to_f64().unwrap()));
        }
    }
    Ok(stages
        .into_values()
        .map(|(name, width, values)| {
            let fisher = fisher_score(&values, &data.labels).ok();
            StageFeatures { name, width, values, labels: data.labels.clone(), fisher }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct SeedRun<T: Scalar> {
    pub seed: u64,
    pub outcome: TrainOutcome<T>,
    pub metrics: SeedMetrics,
}

#[derive(Debug, Clone)]
pub struct MultiSeedRun<T: Scalar> {
    pub runs: Vec<SeedRun<T>>,
    pub report: MetricsReport,
    /// Index into `runs` of the lowest best validation loss (ties to the earlier seed).
    pub best: usize,
}

/// Seeds `cfg.seed, cfg.seed + 1, ...`.
pub fn default_seeds(cfg: &TrainConfig, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| cfg.seed + i).collect()
}

/// Checks that `test` matches `train` in layout and class count.
pub fn check_compatible(train: &TrialSet, test: &TrialSet) -> Result<()> {
    let mut p = Vec::new();
    if train.n_channels != test.n_channels {
        p.push(format!("channel counts differ: train {}, test {}", train.n_channels, test.n_channels));
    }
    if train.n_samples != test.n_samples {
        p.push(format!("trial lengths differ: train {}, test {}", train.n_samples, test.n_samples));
    }
    if train.n_classes != test.n_classes {
        p.push(format!("class counts differ: train {}, test {}", train.n_classes, test.n_classes));
    }
    if train.sample_rate_hz != test.sample_rate_hz {
        p.push(format!("sample rates differ: train {}, test {}", train.sample_rate_hz, test.sample_rate_hz));
    }
    if p.is_empty() {
        Ok(())
    } else {
        Err(Error::Data(p.join("; ")))
    }
}

/// Trains and evaluates once per seed, up to `threads` seeds at a time.
/// Results do not depend on `threads`.
pub fn multi_seed_run<T: Scalar>(
    train: &TrialSet,
    test: &TrialSet,
    cfg: &TrainConfig,
    seeds: &[u64],
    threads: usize,
) -> Result<MultiSeedRun<T>> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    check_compatible(train, test)?;
    check_trainable(train, cfg)?;
    let one = |seed: u64| -> Result<SeedRun<T>> {
        let c = TrainConfig { seed, ..cfg.clone() };
        let outcome = train_model::<T>(train, &c)?;
        let metrics = evaluate(&outcome.net, test, seed)?;
        Ok(SeedRun { seed, outcome, metrics })
    };
    let runs: Vec<SeedRun<T>> = if threads <= 1 || seeds.len() == 1 {
        seeds.iter().map(|&s| one(s)).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.min(seeds.len()))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| seeds.par_iter().map(|&s| one(s)).collect::<Result<_>>())?
    };
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.outcome.best_val_loss < runs[best].outcome.best_val_loss {
            best = i;
        }
    }
    let fisher = export_stage_features(&runs[best].outcome.net, test)?
        .into_iter()
        .filter_map(|s| s.fisher.map(|f| (s.name, f)))
        .collect();
    let per_seed: Vec<SeedMetrics> = runs.iter().map(|r| r.metrics.clone()).collect();
    let report = MetricsReport {
        variant: cfg.variant,
        aggregate: Aggregate::over(&per_seed),
        per_seed,
        fisher,
        comparisons: Vec::new(),
    };
    Ok(MultiSeedRun { runs, report, best })
}
