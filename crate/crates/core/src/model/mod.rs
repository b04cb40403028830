//! The state/flow coordinated network and its ablation variants.
//!
//! Data flow for the full variant, per batch `X: [B, C, T_in]`:
//!
//! ```text
//! state = Dropout(Pool_1(ELU(BN(W2 * (W1 * X)))))                 [B, D]
//! flow  = Dropout(AvgPool_48/32(ELU(BN(V2 * (V1 * diff(X))))))    [B, D, T]
//! level i: gru_i = Pool_Ti(Linear(BiGRU(prev^T)))                  [B, D, T_i]
//!          mod_i = gru_i * (1 + tanh(LN(W_m state)))
//! Z = concat(mod_1, mod_2, mod_3)                                  [B, D, T_sum]
//! logits = MLP(flatten(Z))
//! ```

mod checkpoint;
mod config;
mod export;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ArchConfig, Variant};
pub use export::{read_weights_csv, write_weights_csv, SpatialWeights};
pub use params::{BatchNorm, EncoderParams, HeadParams, LevelParams, Linear, ModulationParams, StaFlowParams};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::{
    self, adaptive_avg_pool, avg_pool2d, batch_norm, conv2d, dropout, elu, layer_norm, linear,
    tanh_act, BatchNormConfig, Mode, Tensor,
};

const LN_EPS: f64 = 1e-5;

/// Intermediate representations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T: Scalar> {
    /// `[B, D]`; the injected noise for `RandomState`, absent for `FlowOnly`.
    pub state: Option<Tensor<T>>,
    /// `[B, D, T]`.
    pub flow: Option<Tensor<T>>,
    /// Per level, `[B, D, T_i]` before modulation.
    pub gru: Vec<Tensor<T>>,
    /// Per level, `[B, D]` gate `1 + m` (modulating variants only).
    pub gates: Vec<Tensor<T>>,
    /// Per level, `[B, D, T_i]` after modulation (equal to `gru` when unmodulated).
    pub modulated: Vec<Tensor<T>>,
    /// `[B, D, T_sum]`, or `[B, D, T_sum + 1]` for `Concat`.
    pub z: Option<Tensor<T>>,
    pub logits: Tensor<T>,
}

/// `X[:, :, 0] = 0`, `X[:, :, t] - X[:, :, t - 1]` afterwards, along the last axis.
pub fn temporal_difference<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let len = *x.shape().last().ok_or_else(|| Error::dim("temporal_difference", "rank 0"))?;
    let rows = x.numel() / len;
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for r in 0..rows {
        for t in 1..len {
            out[r * len + t] = src[r * len + t] - src[r * len + t - 1];
        }
    }
    let shape = x.shape().to_vec();
    Ok(x.diff_op(out, shape, rows, len))
}

impl<T: Scalar> Tensor<T> {
    fn diff_op(&self, out: Vec<T>, shape: Vec<usize>, rows: usize, len: usize) -> Tensor<T> {
        Tensor::from_op("temporal_difference", out, shape, &[self], move |g| {
            let mut dx = vec![T::zero(); rows * len];
            for r in 0..rows {
                for t in 1..len {
                    let gv = g[r * len + t];
                    dx[r * len + t] = dx[r * len + t] + gv;
                    dx[r * len + t - 1] = dx[r * len + t - 1] - gv;
                }
            }
            vec![Some(dx)]
        })
    }
}

/// `W2 * (W1 * X)` for `X: [B, C, T]`, `W1: [S1, 1, C, 1]`, `W2: [D, S1, 1, K]`,
/// evaluated as one convolution with the composed kernel
/// `K[o, c, 0, v] = sum_s W2[o, s, 0, v] W1[s, 0, c, 0]`. Output `[B, D, 1, T - K + 1]`.
pub fn spatiotemporal_conv<T: Scalar>(x: &Tensor<T>, w1: &Tensor<T>, w2: &Tensor<T>) -> Result<Tensor<T>> {
    if x.ndim() != 3 || w1.ndim() != 4 || w2.ndim() != 4 || w1.shape()[2] != x.shape()[1] || w1.shape()[0] != w2.shape()[1] {
        return Err(Error::dim(
            "spatiotemporal_conv",
            format!("input {:?}, spatial {:?}, temporal {:?}", x.shape(), w1.shape(), w2.shape()),
        ));
    }
    let (b, c, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (s1, d, k) = (w1.shape()[0], w2.shape()[0], w2.shape()[3]);
    let spatial = w1.reshape(&[s1, c])?;
    let temporal = w2.reshape(&[d, s1, k])?.permute(&[0, 2, 1])?.reshape(&[d * k, s1])?;
    let kernel = tensor::matmul(&temporal, &spatial)?
        .reshape(&[d, k, c])?
        .permute(&[0, 2, 1])?
        .reshape(&[d, c, 1, k])?;
    conv2d(&x.reshape(&[b, c, 1, t])?, &kernel, None)
}

/// The network: architecture plus parameters.
#[derive(Debug, Clone)]
pub struct StaFlowNet<T: Scalar> {
    pub arch: ArchConfig,
    pub params: StaFlowParams<T>,
}

impl<T: Scalar> StaFlowNet<T> {
    pub fn new<R: Rng + ?Sized>(arch: ArchConfig, rng: &mut R) -> Result<Self> {
        let params = StaFlowParams::init(&arch, rng)?;
        Ok(StaFlowNet { arch, params })
    }

    fn bn(&self, x: &Tensor<T>, layer: &BatchNorm<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut stats = layer.stats.lock().expect("bn stats");
        batch_norm(x, &layer.gamma, &layer.beta, &mut stats, mode, BatchNormConfig::default())
    }

    /// Convolution, batch norm and ELU shared by both encoders: `[B, D, 1, T_conv]`.
    fn encode(&self, enc: &EncoderParams<T>, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let h = spatiotemporal_conv(x, &enc.spatial, &enc.temporal)?;
        Ok(elu(&self.bn(&h, &enc.bn, mode)?))
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let a = &self.arch;
        if x.ndim() != 3 || x.shape()[1] != a.n_channels || x.shape()[2] != a.n_timepoints {
            return Err(Error::dim(
                "forward",
                format!(
                    "input {:?} does not match [B, {}, {}]",
                    x.shape(),
                    a.n_channels,
                    a.n_timepoints
                ),
            ));
        }
        Ok(())
    }

    fn check_params(&self) -> Result<()> {
        let a = &self.arch;
        let v = a.variant;
        let p = &self.params;
        let levels = if v.has_flow() { a.pyramid_lengths.len() } else { 0 };
        if p.state.is_some() != v.has_state_encoder()
            || p.flow.is_some() != v.has_flow()
            || p.levels.len() != levels
            || p.modulation.len() != a.n_modulations()
            || p.head.hidden.len() != a.mlp_hidden.len()
        {
            return Err(Error::Config(format!("parameter set does not match variant {v}")));
        }
        Ok(())
    }

    /// Global state vector `[B, D]`.
    pub fn state_encoder_forward<R: Rng + ?Sized>(&self, x: &Tensor<T>, mode: Mode, rng: &mut R) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let enc = self
            .params
            .state
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} has no state encoder", self.arch.variant)))?;
        let h = self.encode(enc, x, mode)?;
        let (b, d, tc) = (h.shape()[0], h.shape()[1], h.shape()[3]);
        let pooled = adaptive_avg_pool(&h.reshape(&[b, d, tc])?, 1)?.reshape(&[b, d])?;
        dropout(&pooled, self.arch.encoder_dropout, mode, rng)
    }

    /// Flow sequence `[B, D, T]` from the differenced input.
    pub fn flow_encoder_forward<R: Rng + ?Sized>(&self, x: &Tensor<T>, mode: Mode, rng: &mut R) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let enc = self
            .params
            .flow
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} has no flow encoder", self.arch.variant)))?;
        let h = self.encode(enc, &temporal_difference(x)?, mode)?;
        let a = &self.arch;
        let p = avg_pool2d(&h, (1, a.flow_pool_kernel), (1, a.flow_pool_stride))?;
        let (b, d, t) = (p.shape()[0], p.shape()[1], p.shape()[3]);
        dropout(&p.reshape(&[b, d, t])?, a.encoder_dropout, mode, rng)
    }

    /// Gate `1 + tanh(LN(W_m state))`, `[B, D]`.
    pub fn modulation_gate(&self, state: &Tensor<T>, m: &ModulationParams<T>) -> Result<Tensor<T>> {
        let proj = linear(state, &m.weight, None)?;
        Ok(tanh_act(&layer_norm(&proj, &m.ln_gamma, &m.ln_beta, LN_EPS)?).add_scalar(1.0))
    }

    /// One pyramid level. Returns `(gru_i, mod_i)`; `gate` is `[B, D]` or `None`
    /// for an unmodulated level.
    pub fn smf_level_forward(
        &self,
        prev: &Tensor<T>,
        level: &LevelParams<T>,
        target: usize,
        gate: Option<&Tensor<T>>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        if prev.ndim() != 3 || prev.shape()[2] < target {
            return Err(Error::dim(
                "smf_level",
                format!("input {:?} cannot be pooled to length {target}", prev.shape()),
            ));
        }
        let seq = prev.permute(&[0, 2, 1])?;
        let h = tensor::bigru(&seq, &level.forward, &level.backward)?;
        let proj = linear(&h, &level.proj.weight, Some(&level.proj.bias))?.permute(&[0, 2, 1])?;
        let pooled = adaptive_avg_pool(&proj, target)?;
        let modulated = match gate {
            Some(g) => {
                let (b, d) = (g.shape()[0], g.shape()[1]);
                tensor::mul(&pooled, &g.reshape(&[b, d, 1])?)?
            }
            None => pooled.clone(),
        };
        Ok((pooled, modulated))
    }

    /// Classifier head over the flattened representation.
    pub fn classify<R: Rng + ?Sized>(&self, features: &Tensor<T>, mode: Mode, rng: &mut R) -> Result<Tensor<T>> {
        let mut h = features.flatten_from(1)?;
        if h.shape()[1] != self.arch.head_input_dim() {
            return Err(Error::dim(
                "classify",
                format!("feature width {} vs head input {}", h.shape()[1], self.arch.head_input_dim()),
            ));
        }
        for (fc, bn) in &self.params.head.hidden {
            h = linear(&h, &fc.weight, Some(&fc.bias))?;
            h = elu(&self.bn(&h, bn, mode)?);
            h = dropout(&h, self.arch.head_dropout, mode, rng)?;
        }
        linear(&h, &self.params.head.out.weight, Some(&self.params.head.out.bias))
    }

    /// Concatenates the level outputs along time and classifies them.
    pub fn fuse_and_classify<R: Rng + ?Sized>(
        &self,
        levels: &[Tensor<T>],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let want = &self.arch.pyramid_lengths;
        if levels.len() != want.len() {
            return Err(Error::Usage(format!("expected {} level outputs, got {}", want.len(), levels.len())));
        }
        for (l, &t) in levels.iter().zip(want) {
            if l.ndim() != 3 || l.shape()[2] != t {
                return Err(Error::dim("fuse", format!("level output {:?}, expected length {t}", l.shape())));
            }
        }
        let refs: Vec<&Tensor<T>> = levels.iter().collect();
        let z = tensor::concat(&refs, 2)?;
        let logits = self.classify(&z, mode, rng)?;
        Ok((z, logits))
    }

    /// Logits `[B, n_classes]` and the optional trace of intermediates.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
        want_trace: bool,
    ) -> Result<(Tensor<T>, Option<ForwardTrace<T>>)> {
        self.check_input(x)?;
        self.check_params()?;
        let a = &self.arch;
        let v = a.variant;
        let b = x.shape()[0];
        let mut trace = ForwardTrace {
            state: None,
            flow: None,
            gru: Vec::new(),
            gates: Vec::new(),
            modulated: Vec::new(),
            z: None,
            logits: Tensor::zeros(&[1]),
        };

        let state = match v {
            Variant::Full | Variant::StateOnly | Variant::Concat => Some(self.state_encoder_forward(x, mode, rng)?),
            Variant::RandomState => {
                let noise = (0..b * a.state_dim)
                    .map(|_| lit::<T>(rng.sample::<f64, _>(StandardNormal)))
                    .collect();
                Some(Tensor::from_vec(noise, &[b, a.state_dim])?)
            }
            Variant::FlowOnly => None,
        };
        trace.state = state.clone();

        let logits = if v == Variant::StateOnly {
            self.classify(state.as_ref().expect("state"), mode, rng)?
        } else {
            let flow = self.flow_encoder_forward(x, mode, rng)?;
            trace.flow = Some(flow.clone());
            let gates: Vec<Tensor<T>> = if v.modulates() {
                let s = state.as_ref().expect("state");
                self.params
                    .modulation
                    .iter()
                    .map(|m| self.modulation_gate(s, m))
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            let mut prev = flow;
            for (i, (level, &target)) in self.params.levels.iter().zip(&a.pyramid_lengths).enumerate() {
                let gate = match gates.len() {
                    0 => None,
                    1 => Some(&gates[0]),
                    _ => Some(&gates[i]),
                };
                let (gru, modulated) = self.smf_level_forward(&prev, level, target, gate)?;
                if let Some(g) = gate {
                    trace.gates.push(g.clone());
                }
                trace.gru.push(gru);
                trace.modulated.push(modulated.clone());
                prev = modulated;
            }
            let refs: Vec<&Tensor<T>> = trace.modulated.iter().collect();
            let mut z = tensor::concat(&refs, 2)?;
            if v == Variant::Concat {
                let s = state.as_ref().expect("state");
                z = tensor::concat(&[&z, &s.reshape(&[b, a.state_dim, 1])?], 2)?;
            }
            trace.z = Some(z.clone());
            self.classify(&z, mode, rng)?
        };
        if !want_trace {
            return Ok((logits, None));
        }
        trace.logits = logits.clone();
        Ok((logits, Some(trace)))
    }

    /// Parameters shared with `other` (same names) copied from `self`.
    pub fn copy_shared_into(&self, other: &mut StaFlowNet<T>) -> usize {
        let src = self.params.named_tensors();
        let names: Vec<String> = other.params.named_tensors().into_iter().map(|(n, _)| n).collect();
        let mut copied = 0;
        for (name, dst) in names.iter().zip(other.params.tensors_mut()) {
            if let Some((_, s)) = src.iter().find(|(n, t)| n == name && t.shape() == dst.shape()) {
                let vals = s.to_vec();
                dst.update_data(|d| d.copy_from_slice(&vals));
                copied += 1;
            }
        }
        let src_bn = self.params.batch_norms();
        for (name, bn) in other.params.batch_norms() {
            if let Some((_, s)) = src_bn.iter().find(|(n, b)| *n == name && b.gamma.shape() == bn.gamma.shape()) {
                *bn.stats.lock().expect("bn stats") = s.running();
            }
        }
        copied
    }
}
