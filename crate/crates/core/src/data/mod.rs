//! Trial storage, file formats, preprocessing and synthetic data.

mod eegb;
mod epoch;
pub mod filter;
mod import;
mod synth;

pub use eegb::{decode_eegb, encode_eegb, load_eegb, save_eegb, EEGB_MAGIC, EEGB_VERSION};
pub use epoch::epoch_extract;
pub use filter::{bandpass_filter, FilterSpec, Sos};
pub use import::import_csv;
pub use synth::{synth_generate, ClassPattern, SynthSpec};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Labelled multichannel trials, stored trial-major as `[trial][channel][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet {
    pub n_channels: usize,
    pub n_samples: usize,
    pub sample_rate_hz: f32,
    pub n_classes: usize,
    pub labels: Vec<usize>,
    pub data: Vec<f32>,
    pub channel_names: Option<Vec<String>>,
}

impl TrialSet {
    pub fn new(
        n_channels: usize,
        n_samples: usize,
        sample_rate_hz: f32,
        n_classes: usize,
        labels: Vec<usize>,
        data: Vec<f32>,
        channel_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let set = TrialSet { n_channels, n_samples, sample_rate_hz, n_classes, labels, data, channel_names };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.n_samples == 0 {
            return Err(Error::Data(format!(
                "empty trial extents: {} channels x {} samples",
                self.n_channels, self.n_samples
            )));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::Data(format!("sample rate {} must be positive", self.sample_rate_hz)));
        }
        if let Some((i, &l)) = self.labels.iter().enumerate().find(|(_, &l)| l >= self.n_classes) {
            return Err(Error::Data(format!("label {l} of trial {i} is outside [0, {})", self.n_classes)));
        }
        let want = self.labels.len() * self.trial_len();
        if self.data.len() != want {
            return Err(Error::Data(format!("data holds {} samples, expected {want}", self.data.len())));
        }
        if let Some(n) = &self.channel_names {
            if n.len() != self.n_channels {
                return Err(Error::Data(format!("{} channel names for {} channels", n.len(), self.n_channels)));
            }
        }
        Ok(())
    }

    pub fn n_trials(&self) -> usize {
        self.labels.len()
    }

    pub fn trial_len(&self) -> usize {
        self.n_channels * self.n_samples
    }

    pub fn trial(&self, i: usize) -> &[f32] {
        let n = self.trial_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Trials at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> TrialSet {
        let mut data = Vec::with_capacity(indices.len() * self.trial_len());
        for &i in indices {
            data.extend_from_slice(self.trial(i));
        }
        TrialSet {
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            data,
            ..self.header_only()
        }
    }

    fn header_only(&self) -> TrialSet {
        TrialSet {
            n_channels: self.n_channels,
            n_samples: self.n_samples,
            sample_rate_hz: self.sample_rate_hz,
            n_classes: self.n_classes,
            labels: Vec::new(),
            data: Vec::new(),
            channel_names: self.channel_names.clone(),
        }
    }

    /// `[len, C, T]` batch of the trials at `indices`.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Tensor<T> {
        let mut data = Vec::with_capacity(indices.len() * self.trial_len());
        for &i in indices {
            data.extend(self.trial(i).iter().map(|&v| lit::<T>(v as f64)));
        }
        Tensor::from_vec(data, &[indices.len(), self.n_channels, self.n_samples]).expect("batch shape")
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }
}
