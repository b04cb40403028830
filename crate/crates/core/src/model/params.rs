//! Learnable parameters and their initialization.

use std::sync::Mutex;

use rand::Rng;

use super::config::ArchConfig;
use crate::error::Result;
use crate::scalar::{lit, Scalar};
use crate::tensor::{GruWeights, RunningStats, Tensor};

fn uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| lit(rng.random_range(-bound..=bound))).collect();
    Tensor::parameter(data, shape).expect("valid shape")
}

fn constant<T: Scalar>(shape: &[usize], v: f64) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::parameter(vec![lit(v); n], shape).expect("valid shape")
}

/// Batch normalization affine parameters plus running statistics.
#[derive(Debug)]
pub struct BatchNorm<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub stats: Mutex<RunningStats<T>>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: constant(&[channels], 1.0),
            beta: constant(&[channels], 0.0),
            stats: Mutex::new(RunningStats::new(channels)),
        }
    }

    pub fn running(&self) -> RunningStats<T> {
        self.stats.lock().expect("bn stats").clone()
    }
}

impl<T: Scalar> Clone for BatchNorm<T> {
    fn clone(&self) -> Self {
        BatchNorm {
            gamma: self.gamma.deep_clone(),
            beta: self.beta.deep_clone(),
            stats: Mutex::new(self.running()),
        }
    }
}

#[derive(Debug)]
pub struct Linear<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, input: usize, output: usize) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Linear { weight: uniform(rng, &[output, input], bound), bias: uniform(rng, &[output], bound) }
    }
}

impl<T: Scalar> Clone for Linear<T> {
    fn clone(&self) -> Self {
        Linear { weight: self.weight.deep_clone(), bias: self.bias.deep_clone() }
    }
}

/// Spatial kernel `[S1, 1, C, 1]`, temporal kernel `[D, S1, 1, K_t]`, and the
/// batch norm applied after both.
#[derive(Debug)]
pub struct EncoderParams<T: Scalar> {
    pub spatial: Tensor<T>,
    pub temporal: Tensor<T>,
    pub bn: BatchNorm<T>,
}

impl<T: Scalar> EncoderParams<T> {
    fn init<R: Rng + ?Sized>(rng: &mut R, a: &ArchConfig) -> Self {
        let (c, s1, d, kt) = (a.n_channels, a.spatial_filters, a.state_dim, a.temporal_kernel);
        EncoderParams {
            spatial: uniform(rng, &[s1, 1, c, 1], 1.0 / (c as f64).sqrt()),
            temporal: uniform(rng, &[d, s1, 1, kt], 1.0 / ((s1 * kt) as f64).sqrt()),
            bn: BatchNorm::new(d),
        }
    }
}

impl<T: Scalar> Clone for EncoderParams<T> {
    fn clone(&self) -> Self {
        EncoderParams {
            spatial: self.spatial.deep_clone(),
            temporal: self.temporal.deep_clone(),
            bn: self.bn.clone(),
        }
    }
}

/// One pyramid level: bidirectional GRU and its `2H -> D` projection.
#[derive(Debug)]
pub struct LevelParams<T: Scalar> {
    pub forward: GruWeights<T>,
    pub backward: GruWeights<T>,
    pub proj: Linear<T>,
}

fn gru_init<T: Scalar, R: Rng + ?Sized>(rng: &mut R, din: usize, h: usize) -> GruWeights<T> {
    let bound = 1.0 / (h as f64).sqrt();
    GruWeights {
        w_ih: uniform(rng, &[3 * h, din], bound),
        w_hh: uniform(rng, &[3 * h, h], bound),
        b_ih: uniform(rng, &[3 * h], bound),
        b_hh: uniform(rng, &[3 * h], bound),
    }
}

fn gru_clone<T: Scalar>(g: &GruWeights<T>) -> GruWeights<T> {
    GruWeights {
        w_ih: g.w_ih.deep_clone(),
        w_hh: g.w_hh.deep_clone(),
        b_ih: g.b_ih.deep_clone(),
        b_hh: g.b_hh.deep_clone(),
    }
}

impl<T: Scalar> Clone for LevelParams<T> {
    fn clone(&self) -> Self {
        LevelParams {
            forward: gru_clone(&self.forward),
            backward: gru_clone(&self.backward),
            proj: self.proj.clone(),
        }
    }
}

/// `m = tanh(LN(W_m x_state))`; `W_m` starts at zero so the gate starts at one.
#[derive(Debug)]
pub struct ModulationParams<T: Scalar> {
    pub weight: Tensor<T>,
    pub ln_gamma: Tensor<T>,
    pub ln_beta: Tensor<T>,
}

impl<T: Scalar> Clone for ModulationParams<T> {
    fn clone(&self) -> Self {
        ModulationParams {
            weight: self.weight.deep_clone(),
            ln_gamma: self.ln_gamma.deep_clone(),
            ln_beta: self.ln_beta.deep_clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeadParams<T: Scalar> {
    pub hidden: Vec<(Linear<T>, BatchNorm<T>)>,
    pub out: Linear<T>,
}

/// Every learnable tensor of one model variant.
#[derive(Debug, Clone)]
pub struct StaFlowParams<T: Scalar> {
    pub state: Option<EncoderParams<T>>,
    pub flow: Option<EncoderParams<T>>,
    pub levels: Vec<LevelParams<T>>,
    pub modulation: Vec<ModulationParams<T>>,
    pub head: HeadParams<T>,
}

impl<T: Scalar> StaFlowParams<T> {
    pub fn init<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let v = arch.variant;
        let d = arch.state_dim;
        let state = v.has_state_encoder().then(|| EncoderParams::init(rng, arch));
        let flow = v.has_flow().then(|| EncoderParams::init(rng, arch));
        let levels = if v.has_flow() {
            arch.pyramid_lengths
                .iter()
                .map(|_| LevelParams {
                    forward: gru_init(rng, d, arch.gru_hidden),
                    backward: gru_init(rng, d, arch.gru_hidden),
                    proj: Linear::init(rng, 2 * arch.gru_hidden, d),
                })
                .collect()
        } else {
            Vec::new()
        };
        let modulation = (0..arch.n_modulations())
            .map(|_| ModulationParams {
                weight: constant(&[d, d], 0.0),
                ln_gamma: constant(&[d], 1.0),
                ln_beta: constant(&[d], 0.0),
            })
            .collect();
        let mut hidden = Vec::new();
        let mut width = arch.head_input_dim();
        for &h in &arch.mlp_hidden {
            hidden.push((Linear::init(rng, width, h), BatchNorm::new(h)));
            width = h;
        }
        let out = Linear::init(rng, width, arch.n_classes);
        Ok(StaFlowParams { state, flow, levels, modulation, head: HeadParams { hidden, out } })
    }

    /// Learnable tensors in declaration order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = Vec::new();
        for (name, enc) in [("state", &self.state), ("flow", &self.flow)] {
            if let Some(e) = enc {
                out.push((format!("{name}.spatial"), &e.spatial));
                out.push((format!("{name}.temporal"), &e.temporal));
                out.push((format!("{name}.bn.gamma"), &e.bn.gamma));
                out.push((format!("{name}.bn.beta"), &e.bn.beta));
            }
        }
        for (i, l) in self.levels.iter().enumerate() {
            for (dir, g) in [("fwd", &l.forward), ("bwd", &l.backward)] {
                out.push((format!("smf{}.gru_{dir}.w_ih", i + 1), &g.w_ih));
                out.push((format!("smf{}.gru_{dir}.w_hh", i + 1), &g.w_hh));
                out.push((format!("smf{}.gru_{dir}.b_ih", i + 1), &g.b_ih));
                out.push((format!("smf{}.gru_{dir}.b_hh", i + 1), &g.b_hh));
            }
            out.push((format!("smf{}.proj.weight", i + 1), &l.proj.weight));
            out.push((format!("smf{}.proj.bias", i + 1), &l.proj.bias));
        }
        for (i, m) in self.modulation.iter().enumerate() {
            out.push((format!("mod{}.weight", i + 1), &m.weight));
            out.push((format!("mod{}.ln.gamma", i + 1), &m.ln_gamma));
            out.push((format!("mod{}.ln.beta", i + 1), &m.ln_beta));
        }
        for (i, (fc, bn)) in self.head.hidden.iter().enumerate() {
            out.push((format!("head.fc{}.weight", i + 1), &fc.weight));
            out.push((format!("head.fc{}.bias", i + 1), &fc.bias));
            out.push((format!("head.bn{}.gamma", i + 1), &bn.gamma));
            out.push((format!("head.bn{}.beta", i + 1), &bn.beta));
        }
        out.push(("head.out.weight".into(), &self.head.out.weight));
        out.push(("head.out.bias".into(), &self.head.out.bias));
        out
    }

    /// Mutable counterpart of [`named_tensors`](Self::named_tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        for e in [&mut self.state, &mut self.flow].into_iter().flatten() {
            out.push(&mut e.spatial);
            out.push(&mut e.temporal);
            out.push(&mut e.bn.gamma);
            out.push(&mut e.bn.beta);
        }
        for l in &mut self.levels {
            for g in [&mut l.forward, &mut l.backward] {
                out.push(&mut g.w_ih);
                out.push(&mut g.w_hh);
                out.push(&mut g.b_ih);
                out.push(&mut g.b_hh);
            }
            out.push(&mut l.proj.weight);
            out.push(&mut l.proj.bias);
        }
        for m in &mut self.modulation {
            out.push(&mut m.weight);
            out.push(&mut m.ln_gamma);
            out.push(&mut m.ln_beta);
        }
        for (fc, bn) in &mut self.head.hidden {
            out.push(&mut fc.weight);
            out.push(&mut fc.bias);
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        out.push(&mut self.head.out.weight);
        out.push(&mut self.head.out.bias);
        out
    }

    /// Batch-norm layers in declaration order (their running statistics are
    /// state, not learnable parameters).
    pub fn batch_norms(&self) -> Vec<(String, &BatchNorm<T>)> {
        let mut out = Vec::new();
        if let Some(e) = &self.state {
            out.push(("state.bn".to_string(), &e.bn));
        }
        if let Some(e) = &self.flow {
            out.push(("flow.bn".to_string(), &e.bn));
        }
        for (i, (_, bn)) in self.head.hidden.iter().enumerate() {
            out.push((format!("head.bn{}", i + 1), bn));
        }
        out
    }

    pub fn n_scalars(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&self) {
        for (_, t) in self.named_tensors() {
            t.zero_grad();
        }
    }
}
