//! Butterworth bandpass as a cascade of second-order sections.
//!
//! Design: analog lowpass prototype poles, lowpass-to-bandpass transform at
//! the prewarped band edges, bilinear transform. Every section has the
//! numerator `1 - z^-2` (one zero at DC and one at Nyquist) up to gain.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::TrialSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSpec {
    pub order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec { order: 5, low_hz: 4.0, high_hz: 40.0 }
    }
}

impl FilterSpec {
    pub fn validate(&self, fs: f64) -> Result<()> {
        if self.order == 0 {
            return Err(Error::Config("filter order must be positive".into()));
        }
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz && self.high_hz < fs / 2.0) {
            return Err(Error::Config(format!(
                "band {}-{} Hz must satisfy 0 < low < high < Nyquist ({} Hz)",
                self.low_hz,
                self.high_hz,
                fs / 2.0
            )));
        }
        Ok(())
    }

    fn warped(&self, fs: f64) -> (f64, f64) {
        let w = |f: f64| 2.0 * fs * (PI * f / fs).tan();
        (w(self.low_hz), w(self.high_hz))
    }

    /// Magnitude of the analog prototype at the prewarped frequency, which the
    /// bilinear design reproduces exactly in the digital domain.
    pub fn analytic_magnitude(&self, f_hz: f64, fs: f64) -> f64 {
        let (w1, w2) = self.warped(fs);
        let w0sq = w1 * w2;
        let w = 2.0 * fs * (PI * f_hz / fs).tan();
        let x = (w * w - w0sq) / (w * (w2 - w1));
        1.0 / (1.0 + x.powi(2 * self.order as i32)).sqrt()
    }
}

/// Second-order sections `[b0, b1, b2, a1, a2]` with `a0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<[f64; 5]>,
}

impl Sos {
    pub fn butterworth_bandpass(spec: &FilterSpec, fs: f64) -> Result<Self> {
        spec.validate(fs)?;
        let n = spec.order;
        let (w1, w2) = spec.warped(fs);
        let bw = w2 - w1;
        let w0sq = w1 * w2;
        let bilinear = |s: Complex64| (Complex64::new(2.0 * fs, 0.0) + s) / (Complex64::new(2.0 * fs, 0.0) - s);
        // images of prototype pole p: roots of s^2 - p bw s + w0^2
        let images = |p: Complex64| {
            let pb = p * bw;
            let disc = (pb * pb - 4.0 * w0sq).sqrt();
            [(pb + disc) / 2.0, (pb - disc) / 2.0]
        };
        let mut pole_pairs: Vec<(Complex64, Complex64)> = Vec::new();
        for k in 0..n {
            let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            let p = Complex64::from_polar(1.0, theta);
            if p.im > 1e-12 {
                for s in images(p) {
                    pole_pairs.push((s, s.conj()));
                }
            } else if p.im.abs() <= 1e-12 {
                let [a, b] = images(Complex64::new(p.re, 0.0));
                pole_pairs.push((a, b));
            }
        }
        let w_center = 2.0 * (w0sq.sqrt() / (2.0 * fs)).atan();
        let ejw = Complex64::from_polar(1.0, -w_center);
        let sections = pole_pairs
            .into_iter()
            .map(|(pa, pb)| {
                let (za, zb) = (bilinear(pa), bilinear(pb));
                let a1 = -(za + zb).re;
                let a2 = (za * zb).re;
                // unit gain at the center frequency
                let num = Complex64::new(1.0, 0.0) - ejw * ejw;
                let den = Complex64::new(1.0, 0.0) + ejw * a1 + ejw * ejw * a2;
                let g = (den / num).norm();
                [g, 0.0, -g, a1, a2]
            })
            .collect();
        Ok(Sos { sections })
    }

    /// Complex response at `f_hz`.
    pub fn response(&self, f_hz: f64, fs: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * f_hz / fs);
        self.sections.iter().fold(Complex64::new(1.0, 0.0), |acc, s| {
            let num = z1 * z1 * s[2] + z1 * s[1] + s[0];
            let den = z1 * z1 * s[4] + z1 * s[3] + 1.0;
            acc * num / den
        })
    }

    /// Causal filtering with zero initial conditions (transposed direct form II).
    pub fn filter(&self, x: &mut [f64]) {
        for s in &self.sections {
            let [b0, b1, b2, a1, a2] = *s;
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + z1;
                z1 = b1 * xin - a1 * y + z2;
                z2 = b2 * xin - a2 * y;
                *v = y;
            }
        }
    }

    /// Forward pass, then a pass over the time-reversed result.
    pub fn filtfilt(&self, x: &mut [f64]) {
        self.filter(x);
        x.reverse();
        self.filter(x);
        x.reverse();
    }
}

/// Filters every channel of every trial independently.
pub fn bandpass_filter(set: &TrialSet, spec: &FilterSpec, zero_phase: bool) -> Result<TrialSet> {
    let sos = Sos::butterworth_bandpass(spec, set.sample_rate_hz as f64)?;
    let mut out = set.clone();
    let mut buf = vec![0.0f64; set.n_samples];
    for row in out.data.chunks_mut(set.n_samples) {
        for (b, &v) in buf.iter_mut().zip(row.iter()) {
            *b = v as f64;
        }
        if zero_phase {
            sos.filtfilt(&mut buf);
        } else {
            sos.filter(&mut buf);
        }
        for (v, &b) in row.iter_mut().zip(&buf) {
            *v = b as f32;
        }
    }
    Ok(out)
}
