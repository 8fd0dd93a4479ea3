//! Channel-wise parallel spiking neuron: charge, fire, dilation schedule,
//! receptive field and threshold/convolution fusion.
//!
//! The threshold is a per-channel batch normalization followed by a
//! Heaviside step (`Θ(0) = 1`). At inference the normalization folds into
//! the convolution weights and a bias, leaving `S = Θ(conv(X, W_f) + b_f)`.

use std::borrow::Cow;

use rand::Rng;

use crate::engines::{ConvEngine, Kernel, OpCounters, Real};
use crate::error::{Error, Result};
use crate::quant::{QuantGradMode, ShiftWeights};
use crate::tensor::{Matrix, TemporalTensor};

pub const DEFAULT_BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;
/// Membrane time constant of the LIF kernel used to initialize weights.
pub const DEFAULT_TAU_M: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WeightSharing {
    #[default]
    ChannelWise,
    /// One length-k kernel for every channel (the sliding neuron).
    SharedAcrossChannels,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuronConfig {
    pub channels: usize,
    pub order: usize,
    pub dilation: usize,
    pub weight_sharing: WeightSharing,
    pub quantized: bool,
    pub grad_mode: QuantGradMode,
}

impl NeuronConfig {
    pub fn new(channels: usize, order: usize, dilation: usize) -> Result<Self> {
        let cfg = NeuronConfig {
            channels,
            order,
            dilation,
            weight_sharing: WeightSharing::ChannelWise,
            quantized: false,
            grad_mode: QuantGradMode::WholeSte,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn shared(mut self) -> Self {
        self.weight_sharing = WeightSharing::SharedAcrossChannels;
        self
    }

    pub fn quantized(mut self, on: bool) -> Self {
        self.quantized = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.order == 0 || self.dilation == 0 {
            return Err(Error::InvalidConfig(format!(
                "C={}, k={}, d={} must all be at least 1",
                self.channels, self.order, self.dilation
            )));
        }
        Ok(())
    }

    /// Rows of the stored weight matrix.
    pub fn weight_rows(&self) -> usize {
        match self.weight_sharing {
            WeightSharing::ChannelWise => self.channels,
            WeightSharing::SharedAcrossChannels => 1,
        }
    }
}

/// Learnable synaptic kernel: `C × k`, or `1 × k` when shared.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronParams {
    pub weights: Matrix,
}

impl NeuronParams {
    pub fn new(weights: Matrix) -> Result<Self> {
        if !weights.is_finite() {
            return Err(Error::NonFinite("neuron weights".into()));
        }
        Ok(NeuronParams { weights })
    }

    /// Last `k` taps of the reset-free LIF response
    /// `τ⁻¹(1 − τ⁻¹)^lag`, identical for every channel.
    pub fn lif_init(cfg: &NeuronConfig, tau_m: f64) -> Result<Self> {
        if tau_m <= 1.0 {
            return Err(Error::InvalidConfig(format!("tau_m must exceed 1, got {tau_m}")));
        }
        let k = cfg.order;
        let weights = Matrix::from_fn(cfg.weight_rows(), k, |_, i| {
            (1.0 / tau_m) * (1.0 - 1.0 / tau_m).powi((k - 1 - i) as i32)
        });
        Ok(NeuronParams { weights })
    }

    /// Uniform in `(−k^{-1/2}, k^{-1/2})`.
    pub fn uniform_init(cfg: &NeuronConfig, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (cfg.order as f64).sqrt();
        let weights = Matrix::from_fn(cfg.weight_rows(), cfg.order, |_, _| rng.gen_range(-bound..bound));
        NeuronParams { weights }
    }

    /// The `C × k` kernel actually applied, broadcasting a shared row.
    pub fn effective(&self, cfg: &NeuronConfig) -> Result<Cow<'_, Matrix>> {
        check_param_shape(&self.weights, cfg)?;
        Ok(match cfg.weight_sharing {
            WeightSharing::ChannelWise => Cow::Borrowed(&self.weights),
            WeightSharing::SharedAcrossChannels => {
                let row = self.weights.row(0);
                Cow::Owned(Matrix::from_fn(cfg.channels, cfg.order, |_, i| row[i]))
            }
        })
    }
}

fn check_param_shape(w: &Matrix, cfg: &NeuronConfig) -> Result<()> {
    if w.rows() != cfg.weight_rows() || w.cols() != cfg.order {
        return Err(Error::ShapeMismatch(format!(
            "weights are {}x{}, config expects {}x{}",
            w.rows(),
            w.cols(),
            cfg.weight_rows(),
            cfg.order
        )));
    }
    Ok(())
}

/// Batch-normalization state realizing the learnable channel-wise threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

impl ThresholdParams {
    /// `γ = 1`, `β = −1`, running statistics at the identity.
    pub fn new(channels: usize) -> Self {
        ThresholdParams {
            gamma: vec![1.0; channels],
            beta: vec![-1.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: DEFAULT_BN_EPS,
            momentum: DEFAULT_BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        if [self.beta.len(), self.running_mean.len(), self.running_var.len()].iter().any(|&l| l != c) {
            return Err(Error::ShapeMismatch("threshold vectors differ in length".into()));
        }
        if self.running_var.iter().any(|&v| v < 0.0) || self.eps <= 0.0 {
            return Err(Error::InvalidConfig("variance must be non-negative and eps positive".into()));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::InvalidConfig(format!("momentum {} outside (0, 1)", self.momentum)));
        }
        Ok(())
    }

    /// Folds new batch statistics into the running averages. `unbiased_var`
    /// is the batch variance with Bessel's correction.
    pub fn update_running(&mut self, mean: &[f64], unbiased_var: &[f64]) {
        let m = self.momentum;
        for c in 0..self.gamma.len() {
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * mean[c];
            self.running_var[c] = (1.0 - m) * self.running_var[c] + m * unbiased_var[c];
        }
    }
}

/// Convolution weights and bias with the threshold folded in.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedParams {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Dilations `d⁰ = 1`, `d^{l+1} = (d^l mod 3) + 1`.
pub fn sawtooth_schedule(num_layers: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |d| Some(d % 3 + 1)).take(num_layers).collect()
}

/// Past time-steps that can influence the last layer's output:
/// `1 + Σ (k_l − 1)·d_l`.
pub fn receptive_field(orders: &[usize], dilations: &[usize]) -> Result<usize> {
    if orders.len() != dilations.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} orders for {} dilations",
            orders.len(),
            dilations.len()
        )));
    }
    Ok(1 + orders.iter().zip(dilations).map(|(&k, &d)| k.saturating_sub(1) * d).sum::<usize>())
}

/// Weight representations accepted by [`charge`].
#[derive(Clone, Copy, Debug)]
pub enum ChargeWeights<'a> {
    Float(&'a NeuronParams),
    Fused(&'a FusedParams),
    Shift { weights: &'a ShiftWeights, bias: Option<&'a [f64]> },
}

/// Membrane potentials `H[t][c] = Σ_i W[c][i]·X[t − (k−1−i)·d][c] (+ b[c])`.
pub fn charge<F: Real>(
    x: &TemporalTensor<F>,
    weights: ChargeWeights<'_>,
    cfg: &NeuronConfig,
    engine: &mut ConvEngine,
    counters: &mut OpCounters,
) -> Result<TemporalTensor<F>> {
    cfg.validate()?;
    if x.dims().c != cfg.channels {
        return Err(Error::ChannelMismatch { expected: cfg.channels, got: x.dims().c });
    }
    match weights {
        ChargeWeights::Float(p) => {
            let w = p.effective(cfg)?;
            engine.forward(x, Kernel::Float(&w), None, cfg.dilation, counters)
        }
        ChargeWeights::Fused(f) => engine.forward(x, Kernel::Float(&f.weights), Some(&f.bias), cfg.dilation, counters),
        ChargeWeights::Shift { weights, bias } => {
            engine.forward(x, Kernel::Shift(weights), bias, cfg.dilation, counters)
        }
    }
}

#[inline]
pub fn heaviside(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Per-channel mean and biased variance over every axis except `C`.
pub fn batch_statistics<F: Real>(h: &TemporalTensor<F>) -> (Vec<f64>, Vec<f64>) {
    let c_len = h.dims().c;
    let count = (h.len() / c_len) as f64;
    let ts = h.time_stride();
    let data = h.data();
    let mut mean = vec![0.0; c_len];
    for lane in h.lanes() {
        for t in 0..h.dims().t {
            mean[lane.c] += data[lane.base + t * ts].to_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; c_len];
    for lane in h.lanes() {
        for t in 0..h.dims().t {
            let dv = data[lane.base + t * ts].to_f64() - mean[lane.c];
            var[lane.c] += dv * dv;
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    (mean, var)
}

/// Sample count per channel used by the statistics of `h`.
pub fn samples_per_channel<F: Real>(h: &TemporalTensor<F>) -> usize {
    h.len() / h.dims().c
}

/// Bessel-corrected variance from a biased one.
pub fn unbiased(var: &[f64], samples: usize) -> Vec<f64> {
    if samples < 2 {
        return var.to_vec();
    }
    let f = samples as f64 / (samples - 1) as f64;
    var.iter().map(|v| v * f).collect()
}

/// Spikes `S = Θ(γ(H − μ)/√(σ² + ε) + β)`.
///
/// Training mode normalizes with batch statistics and updates the running
/// averages; inference mode uses the running averages.
pub fn fire(h: &TemporalTensor<f64>, thr: &mut ThresholdParams, training: bool) -> Result<TemporalTensor<f64>> {
    if h.dims().c != thr.channels() {
        return Err(Error::ChannelMismatch { expected: thr.channels(), got: h.dims().c });
    }
    let (mean, var) = if training {
        let (mean, var) = batch_statistics(h);
        thr.update_running(&mean, &unbiased(&var, samples_per_channel(h)));
        (mean, var)
    } else {
        (thr.running_mean.clone(), thr.running_var.clone())
    };
    let ts = h.time_stride();
    let src = h.data();
    let mut out = vec![0.0; h.len()];
    for lane in h.lanes() {
        let c = lane.c;
        let scale = thr.gamma[c] / (var[c] + thr.eps).sqrt();
        for t in 0..h.dims().t {
            let idx = lane.base + t * ts;
            out[idx] = heaviside(scale * (src[idx] - mean[c]) + thr.beta[c]);
        }
    }
    h.with_data(out)
}

/// Folds the threshold into the kernel using the given statistics:
/// `W_f = γ/√(σ²+ε) · W`, `b_f = β − γμ/√(σ²+ε)`.
pub fn fuse_with_stats(weights: &Matrix, thr: &ThresholdParams, mean: &[f64], var: &[f64]) -> FusedParams {
    let scale: Vec<f64> = (0..weights.rows()).map(|c| thr.gamma[c] / (var[c] + thr.eps).sqrt()).collect();
    let fused = Matrix::from_fn(weights.rows(), weights.cols(), |c, i| scale[c] * weights.get(c, i));
    let bias = (0..weights.rows()).map(|c| thr.beta[c] - scale[c] * mean[c]).collect();
    FusedParams { weights: fused, bias }
}

/// Inference-time fusion with the running statistics.
pub fn fuse_bn(params: &NeuronParams, cfg: &NeuronConfig, thr: &ThresholdParams) -> Result<FusedParams> {
    thr.validate()?;
    let w = params.effective(cfg)?;
    if thr.channels() != w.rows() {
        return Err(Error::ChannelMismatch { expected: w.rows(), got: thr.channels() });
    }
    Ok(fuse_with_stats(&w, thr, &thr.running_mean, &thr.running_var))
}
