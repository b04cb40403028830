//! Seeded synthetic motor-imagery trials.
//!
//! Every trial is white Gaussian noise plus a `rhythm_hz` sinusoid with a
//! random phase (shared by all channels of the trial). During the second half
//! of the trial the rhythm amplitude on the channels assigned to the trial's
//! class is scaled by `1 - erd_depth`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::TrialSet;
use crate::error::{Error, Result};

/// Channels desynchronized for one class, and by how much.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassPattern {
    pub channels: Vec<usize>,
    pub erd_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub trials_per_class: usize,
    pub n_channels: usize,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub rhythm_hz: f64,
    pub rhythm_amplitude: f64,
    pub noise_std: f64,
    /// Depth used for the default patterns when `classes` is empty.
    pub erd_depth: f64,
    /// One pattern per class; empty splits the channels into `n_classes`
    /// contiguous blocks.
    pub classes: Vec<ClassPattern>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_classes: 2,
            trials_per_class: 100,
            n_channels: 8,
            duration_s: 4.0,
            sample_rate_hz: 250.0,
            rhythm_hz: 10.0,
            rhythm_amplitude: 10.0,
            noise_std: 10.0,
            erd_depth: 0.8,
            classes: Vec::new(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }

    /// Explicit patterns, or the default contiguous split.
    pub fn patterns(&self) -> Vec<ClassPattern> {
        if !self.classes.is_empty() {
            return self.classes.clone();
        }
        let k = self.n_classes.max(1);
        (0..k)
            .map(|c| ClassPattern {
                channels: (c * self.n_channels / k..(c + 1) * self.n_channels / k).collect(),
                erd_depth: self.erd_depth,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.n_classes < 1 || self.trials_per_class < 1 || self.n_channels < 1 {
            p.push("n_classes, trials_per_class and n_channels must be positive".to_string());
        }
        if !(self.sample_rate_hz > 0.0) || self.n_samples() == 0 {
            p.push(format!("{} s at {} Hz gives no samples", self.duration_s, self.sample_rate_hz));
        }
        if !(self.noise_std >= 0.0) || !(self.rhythm_amplitude >= 0.0) {
            p.push("noise_std and rhythm_amplitude must be non-negative".into());
        }
        if !self.classes.is_empty() && self.classes.len() != self.n_classes {
            p.push(format!("{} class patterns for {} classes", self.classes.len(), self.n_classes));
        }
        for (c, pat) in self.patterns().iter().enumerate() {
            if let Some(ch) = pat.channels.iter().find(|&&ch| ch >= self.n_channels) {
                p.push(format!("class {c}: channel {ch} outside [0, {})", self.n_channels));
            }
            if !(0.0..=1.0).contains(&pat.erd_depth) {
                p.push(format!("class {c}: ERD depth {} outside [0, 1]", pat.erd_depth));
            }
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }
}

/// Trials in class-interleaved order (`label = i % n_classes`).
pub fn synth_generate(spec: &SynthSpec) -> Result<TrialSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let (c, n, k) = (spec.n_channels, spec.n_samples(), spec.n_classes);
    let patterns = spec.patterns();
    let half = n / 2;
    let omega = 2.0 * PI * spec.rhythm_hz / spec.sample_rate_hz;
    let total = k * spec.trials_per_class;
    let mut labels = Vec::with_capacity(total);
    let mut data = Vec::with_capacity(total * c * n);
    for i in 0..total {
        let label = i % k;
        let phase = rng.random_range(0.0..2.0 * PI);
        let pat = &patterns[label];
        for ch in 0..c {
            let erd = if pat.channels.contains(&ch) { 1.0 - pat.erd_depth } else { 1.0 };
            for t in 0..n {
                let amp = if t >= half { spec.rhythm_amplitude * erd } else { spec.rhythm_amplitude };
                let v = amp * (omega * t as f64 + phase).sin() + noise.sample(&mut rng);
                data.push(v as f32);
            }
        }
        labels.push(label);
    }
    let names = (0..c).map(|i| format!("S{}", i + 1)).collect();
    TrialSet::new(c, n, spec.sample_rate_hz as f32, k, labels, data, Some(names))
}
