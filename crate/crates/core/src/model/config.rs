use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::pooled_len;

/// Which parts of the architecture are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// State and flow branches with state-modulated pyramid.
    Full,
    /// State encoder straight into the classifier.
    StateOnly,
    /// Flow encoder and pyramid, gate fixed to one.
    FlowOnly,
    /// Full architecture with the state vector replaced by N(0, 1) noise.
    RandomState,
    /// Unmodulated pyramid output with the state vector appended as an extra column.
    Concat,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::StateOnly,
        Variant::FlowOnly,
        Variant::RandomState,
        Variant::Concat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "Full",
            Variant::StateOnly => "StateOnly",
            Variant::FlowOnly => "FlowOnly",
            Variant::RandomState => "RandomState",
            Variant::Concat => "Concat",
        }
    }

    pub fn has_state_encoder(self) -> bool {
        matches!(self, Variant::Full | Variant::StateOnly | Variant::Concat)
    }

    pub fn has_flow(self) -> bool {
        self != Variant::StateOnly
    }

    pub fn modulates(self) -> bool {
        matches!(self, Variant::Full | Variant::RandomState)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        Variant::ALL
            .into_iter()
            .find(|v| v.name().to_ascii_lowercase() == key || (key == "staflownet" && *v == Variant::Full))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Architecture hyperparameters. Channel count, trial length and class count
/// come from the data; the rest default to the reference sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub n_channels: usize,
    pub n_timepoints: usize,
    pub n_classes: usize,
    pub state_dim: usize,
    pub spatial_filters: usize,
    pub temporal_kernel: usize,
    pub flow_pool_kernel: usize,
    pub flow_pool_stride: usize,
    pub pyramid_lengths: Vec<usize>,
    pub gru_hidden: usize,
    pub mlp_hidden: Vec<usize>,
    pub encoder_dropout: f64,
    pub head_dropout: f64,
    pub variant: Variant,
    pub share_modulation: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            n_channels: 22,
            n_timepoints: 1000,
            n_classes: 4,
            state_dim: 80,
            spatial_filters: 40,
            temporal_kernel: 32,
            flow_pool_kernel: 48,
            flow_pool_stride: 32,
            pyramid_lengths: vec![16, 4, 1],
            gru_hidden: 40,
            mlp_hidden: vec![256, 128],
            encoder_dropout: 0.5,
            head_dropout: 0.25,
            variant: Variant::Full,
            share_modulation: false,
        }
    }
}

impl ArchConfig {
    /// Length after the temporal convolution.
    pub fn conv_len(&self) -> Option<usize> {
        (self.temporal_kernel >= 1 && self.temporal_kernel <= self.n_timepoints)
            .then(|| self.n_timepoints - self.temporal_kernel + 1)
    }

    /// Length `T` of the pooled flow sequence.
    pub fn flow_len(&self) -> Option<usize> {
        pooled_len(self.conv_len()?, self.flow_pool_kernel, self.flow_pool_stride)
    }

    pub fn t_sum(&self) -> usize {
        self.pyramid_lengths.iter().sum()
    }

    /// Width of the flattened classifier input.
    pub fn head_input_dim(&self) -> usize {
        match self.variant {
            Variant::StateOnly => self.state_dim,
            Variant::Concat => self.state_dim * (self.t_sum() + 1),
            _ => self.state_dim * self.t_sum(),
        }
    }

    /// Number of modulation blocks (one per level unless shared).
    pub fn n_modulations(&self) -> usize {
        match (self.variant.modulates(), self.share_modulation) {
            (false, _) => 0,
            (true, true) => 1,
            (true, false) => self.pyramid_lengths.len(),
        }
    }

    /// Collects every violated constraint.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let positive = [
            ("n_channels", self.n_channels),
            ("n_timepoints", self.n_timepoints),
            ("state_dim", self.state_dim),
            ("spatial_filters", self.spatial_filters),
            ("temporal_kernel", self.temporal_kernel),
            ("flow_pool_kernel", self.flow_pool_kernel),
            ("flow_pool_stride", self.flow_pool_stride),
            ("gru_hidden", self.gru_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                out.push(format!("{name} must be positive"));
            }
        }
        if self.n_classes < 2 {
            out.push(format!("n_classes must be at least 2, got {}", self.n_classes));
        }
        for (name, p) in [("encoder_dropout", self.encoder_dropout), ("head_dropout", self.head_dropout)] {
            if !(0.0..1.0).contains(&p) {
                out.push(format!("{name} {p} outside [0, 1)"));
            }
        }
        if self.mlp_hidden.contains(&0) {
            out.push("mlp_hidden widths must be positive".into());
        }
        if self.variant.has_flow() {
            let p = &self.pyramid_lengths;
            if p.is_empty() || p.contains(&0) {
                out.push("pyramid_lengths must be non-empty and positive".into());
            } else if p.windows(2).any(|w| w[0] < w[1]) {
                out.push(format!("pyramid_lengths {p:?} must be non-increasing"));
            }
            match self.flow_len() {
                None => out.push(format!(
                    "n_timepoints {} too short for temporal kernel {} and flow pool {}",
                    self.n_timepoints, self.temporal_kernel, self.flow_pool_kernel
                )),
                Some(t) if !p.is_empty() && t < p[0] => {
                    // smallest T_in giving flow length >= T_1
                    let need = (p[0] - 1) * self.flow_pool_stride + self.flow_pool_kernel + self.temporal_kernel - 1;
                    out.push(format!(
                        "flow length {t} is shorter than the first pyramid level {}; n_timepoints must be at least {need}",
                        p[0]
                    ));
                }
                _ => {}
            }
        } else if self.conv_len().is_none() {
            out.push(format!(
                "n_timepoints {} shorter than temporal kernel {}",
                self.n_timepoints, self.temporal_kernel
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }
}
