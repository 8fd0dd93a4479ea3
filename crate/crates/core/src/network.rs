//! Layer stacks for training and inference.
//!
//! A [`Network`] alternates linear synapses with spiking layers and carries
//! `f64` shadow parameters for training. Spiking layers follow the two-pass
//! scheme: a float convolution provides the batch statistics, the threshold
//! is folded into the kernel, the folded kernel is optionally quantized to
//! powers of two, and a second convolution with the folded (quantized)
//! kernel plus bias produces the membrane potential.
//!
//! [`Network::export`] freezes the running statistics into an
//! [`InferenceModel`] whose values are all `f32`-representable, matching
//! what the model file stores.

use rand::Rng;

use crate::engines::{
    conv_backward_bias, conv_backward_input, conv_backward_weight, conv_forward_direct, ConvEngine, EngineKind,
    Kernel, OpCounters, Real,
};
use crate::error::{Error, Result};
use crate::neuron::{
    batch_statistics, fire, fuse_bn, fuse_with_stats, heaviside, samples_per_channel, unbiased, FusedParams,
    NeuronConfig, NeuronParams, ThresholdParams, WeightSharing,
};
use crate::quant::{dequantize, quantize_backward, quantize_pow2, ShiftWeights};
use crate::tensor::{convert_layout, merge_time_batch, Dims, Layout, Matrix, TemporalTensor};
use crate::train::SurrogateConfig;

/// Fully connected synapse applied independently at every time-step and site.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    /// `out × in`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LinearLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::ShapeMismatch(format!(
                "linear bias has {} entries for {} outputs",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(LinearLayer { weight, bias })
    }

    /// Uniform in `±1/√in` for weights and bias.
    pub fn random(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let weight = Matrix::from_fn(out_features, in_features, |_, _| rng.gen_range(-bound..bound));
        let bias = (0..out_features).map(|_| rng.gen_range(-bound..bound)).collect();
        LinearLayer { weight, bias }
    }

    pub fn in_features(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_features(&self) -> usize {
        self.weight.rows()
    }

    /// `y = W·x + b` at every `(t, n, site)`. Zero inputs are skipped, so
    /// binary spike inputs cost one ADD per active input and output
    /// (accumulate-only synapse) and real-valued inputs one MUL and one ADD.
    pub fn forward<F: Real>(&self, x: &TemporalTensor<F>, counters: &mut SynapseStats) -> Result<TemporalTensor<F>> {
        let (n_in, n_out) = (self.in_features(), self.out_features());
        if x.dims().c != n_in {
            return Err(Error::ChannelMismatch { expected: n_in, got: x.dims().c });
        }
        let dims = x.dims();
        let out_dims = Dims { c: n_out, ..dims.clone() };
        let mut out = TemporalTensor::<F>::zeros(out_dims, x.layout())?.into_vec();
        let sites = dims.spatial_size();
        let mut input = vec![0.0f64; n_in];
        let mut active = 0u64;
        let mut binary = true;
        let out_probe = TemporalTensor::<F>::zeros(Dims { c: n_out, ..dims.clone() }, x.layout())?;
        let fast_rows = if x.layout() == Layout::TimeFirst && sites == 1 { Some(merge_time_batch(x)?) } else { None };
        for t in 0..dims.t {
            for n in 0..dims.n {
                for s in 0..sites {
                    match &fast_rows {
                        Some(view) => {
                            for (dst, v) in input.iter_mut().zip(view.row(t * dims.n + n)) {
                                *dst = v.to_f64();
                            }
                        }
                        None => {
                            for (c, dst) in input.iter_mut().enumerate() {
                                *dst = x.get(t, n, c, s).to_f64();
                            }
                        }
                    }
                    for &v in &input {
                        if v != 0.0 {
                            active += 1;
                            binary &= v == 1.0;
                        }
                    }
                    for o in 0..n_out {
                        let row = self.weight.row(o);
                        let mut acc = 0.0;
                        for (&w, &v) in row.iter().zip(&input) {
                            if v != 0.0 {
                                acc += w * v;
                            }
                        }
                        acc += self.bias[o];
                        out[out_probe.offset(t, n, o, s)] = F::from_f64(acc);
                    }
                }
            }
        }
        let total_inputs = (dims.t * dims.n * sites * n_in) as u64;
        counters.inputs += total_inputs;
        counters.active_inputs += active;
        if binary {
            counters.ops.adds += active * n_out as u64;
        } else {
            counters.ops.muls += total_inputs * n_out as u64;
            counters.ops.adds += total_inputs * n_out as u64;
        }
        out_probe.with_data(out)
    }

    /// Returns `(∂L/∂x, ∂L/∂W, ∂L/∂b)`.
    pub fn backward(&self, x: &TemporalTensor<f64>, dy: &TemporalTensor<f64>) -> Result<(TemporalTensor<f64>, Matrix, Vec<f64>)> {
        let (n_in, n_out) = (self.in_features(), self.out_features());
        let dims = x.dims();
        if dy.dims().c != n_out || dy.dims().t != dims.t || dy.dims().n != dims.n || dy.layout() != x.layout() {
            return Err(Error::ShapeMismatch("linear upstream gradient does not match output".into()));
        }
        let mut dx = vec![0.0; x.len()];
        let mut dw = Matrix::zeros(n_out, n_in);
        let mut db = vec![0.0; n_out];
        for t in 0..dims.t {
            for n in 0..dims.n {
                for s in 0..dims.spatial_size() {
                    for (o, db_o) in db.iter_mut().enumerate() {
                        let g = dy.get(t, n, o, s);
                        if g == 0.0 {
                            continue;
                        }
                        *db_o += g;
                        let row = self.weight.row(o);
                        for (i, &w) in row.iter().enumerate().take(n_in) {
                            let xi = x.offset(t, n, i, s);
                            dx[xi] += w * g;
                            let cur = dw.get(o, i);
                            dw.set(o, i, cur + g * x.data()[xi]);
                        }
                    }
                }
            }
        }
        Ok((x.with_data(dx)?, dw, db))
    }
}

/// Synaptic-layer activity gathered during a forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SynapseStats {
    pub ops: OpCounters,
    pub inputs: u64,
    pub active_inputs: u64,
}

impl SynapseStats {
    pub fn firing_rate(&self) -> f64 {
        if self.inputs == 0 {
            0.0
        } else {
            self.active_inputs as f64 / self.inputs as f64
        }
    }
}

/// Which statistics the training forward folds into the kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FusionStats {
    /// Statistics of the current batch, differentiated through.
    #[default]
    Batch,
    /// Running statistics (after this batch's update), treated as constants.
    Running,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SpikeMode {
    /// `S = Θ(H)`.
    #[default]
    Heaviside,
    /// `S = σ(H)`, the smooth primitive of the surrogate derivative. Makes the
    /// loss differentiable so gradients can be checked numerically.
    Smooth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardOptions {
    pub spike: SpikeMode,
    pub update_running: bool,
    pub fusion: FusionStats,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions { spike: SpikeMode::Heaviside, update_running: true, fusion: FusionStats::Batch }
    }
}

#[derive(Debug)]
pub struct SpikingLayer {
    pub cfg: NeuronConfig,
    pub params: NeuronParams,
    pub threshold: ThresholdParams,
    pub engine: ConvEngine,
}

impl Clone for SpikingLayer {
    fn clone(&self) -> Self {
        SpikingLayer {
            cfg: self.cfg.clone(),
            params: self.params.clone(),
            threshold: self.threshold.clone(),
            engine: ConvEngine::new(self.engine.kind()).with_block(self.engine.block()),
        }
    }
}

impl SpikingLayer {
    pub fn new(cfg: NeuronConfig, params: NeuronParams) -> Result<Self> {
        cfg.validate()?;
        params.effective(&cfg)?;
        Ok(SpikingLayer { threshold: ThresholdParams::new(cfg.channels), cfg, params, engine: ConvEngine::new(EngineKind::DirectLoop) })
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Linear(LinearLayer),
    Spiking(SpikingLayer),
}

impl Layer {
    pub fn num_params(&self) -> usize {
        match self {
            Layer::Linear(l) => l.weight.data().len() + l.bias.len(),
            Layer::Spiking(s) => s.params.weights.data().len() + 2 * s.cfg.channels,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            Layer::Linear(l) => l.out_features(),
            Layer::Spiking(s) => s.cfg.channels,
        }
    }
}

/// Intermediate values of one layer's training forward pass.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum LayerCache {
    Linear {
        x: TemporalTensor<f64>,
    },
    Spiking {
        x: TemporalTensor<f64>,
        raw: TemporalTensor<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
        w_eff: Matrix,
        fused: FusedParams,
        w_used: Matrix,
        h: TemporalTensor<f64>,
        through_stats: bool,
    },
}

/// Gradients of one layer, shaped like its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerGrad {
    Linear { weight: Matrix, bias: Vec<f64> },
    Spiking { weight: Matrix, gamma: Vec<f64>, beta: Vec<f64> },
}

impl LayerGrad {
    fn append_to(&self, out: &mut Vec<f64>) {
        match self {
            LayerGrad::Linear { weight, bias } => {
                out.extend_from_slice(weight.data());
                out.extend_from_slice(bias);
            }
            LayerGrad::Spiking { weight, gamma, beta } => {
                out.extend_from_slice(weight.data());
                out.extend_from_slice(gamma);
                out.extend_from_slice(beta);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    pub input: TemporalTensor<f64>,
    /// Zero weights met by the round-STE quantizer gradient.
    pub instability: u64,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            g.append_to(&mut out);
        }
        out
    }
}

/// Names one scalar parameter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCoord {
    pub layer: usize,
    pub tensor: &'static str,
    pub index: usize,
}

impl std::fmt::Display for ParamCoord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "layer {} {}[{}]", self.layer, self.tensor, self.index)
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    layers: Vec<Layer>,
    pub surrogate: SurrogateConfig,
    layout: Layout,
}

impl Network {
    pub fn new(layers: Vec<Layer>, surrogate: SurrogateConfig) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyNetwork);
        }
        for pair in layers.windows(2) {
            let expected = match &pair[1] {
                Layer::Linear(l) => l.in_features(),
                Layer::Spiking(s) => s.cfg.channels,
            };
            if pair[0].out_channels() != expected {
                return Err(Error::ChannelMismatch { expected, got: pair[0].out_channels() });
            }
        }
        Ok(Network { layers, surrogate, layout: Layout::TimeFirst })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Layout all activations use inside the network.
    pub fn set_layout(&mut self, layout: Layout) {
        self.layout = layout;
    }

    pub fn in_channels(&self) -> usize {
        match &self.layers[0] {
            Layer::Linear(l) => l.in_features(),
            Layer::Spiking(s) => s.cfg.channels,
        }
    }

    pub fn spiking_layers(&self) -> impl Iterator<Item = &SpikingLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Spiking(s) => Some(s),
            Layer::Linear(_) => None,
        })
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            match layer {
                Layer::Linear(l) => {
                    out.extend_from_slice(l.weight.data());
                    out.extend_from_slice(&l.bias);
                }
                Layer::Spiking(s) => {
                    out.extend_from_slice(s.params.weights.data());
                    out.extend_from_slice(&s.threshold.gamma);
                    out.extend_from_slice(&s.threshold.beta);
                }
            }
        }
        out
    }

    pub fn set_params_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!("{} values for {} parameters", values.len(), self.num_params())));
        }
        let mut it = values.iter().copied();
        let mut fill = |dst: &mut [f64]| dst.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
        for layer in &mut self.layers {
            match layer {
                Layer::Linear(l) => {
                    fill(l.weight.data_mut());
                    fill(&mut l.bias);
                }
                Layer::Spiking(s) => {
                    fill(s.params.weights.data_mut());
                    fill(&mut s.threshold.gamma);
                    fill(&mut s.threshold.beta);
                }
            }
        }
        Ok(())
    }

    pub fn param_coords(&self) -> Vec<ParamCoord> {
        let mut out = Vec::with_capacity(self.num_params());
        let mut push = |layer: usize, tensor: &'static str, len: usize| {
            out.extend((0..len).map(|index| ParamCoord { layer, tensor, index }));
        };
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Linear(l) => {
                    push(i, "weight", l.weight.data().len());
                    push(i, "bias", l.bias.len());
                }
                Layer::Spiking(s) => {
                    push(i, "weight", s.params.weights.data().len());
                    push(i, "gamma", s.cfg.channels);
                    push(i, "beta", s.cfg.channels);
                }
            }
        }
        out
    }

    /// Forward pass of one layer in training mode.
    pub fn forward_layer(
        &mut self,
        index: usize,
        x: &TemporalTensor<f64>,
        opts: ForwardOptions,
    ) -> Result<(TemporalTensor<f64>, LayerCache)> {
        let surrogate = self.surrogate;
        match &mut self.layers[index] {
            Layer::Linear(l) => {
                let y = l.forward(x, &mut SynapseStats::default())?;
                Ok((y, LayerCache::Linear { x: x.clone() }))
            }
            Layer::Spiking(s) => spiking_forward(s, x, opts, surrogate),
        }
    }

    /// Backward pass of one layer. Returns the input gradient and the
    /// parameter gradients.
    pub fn backward_layer(
        &mut self,
        index: usize,
        cache: &LayerCache,
        dy: &TemporalTensor<f64>,
        instability: &mut u64,
    ) -> Result<(TemporalTensor<f64>, LayerGrad)> {
        let surrogate = self.surrogate;
        match (&mut self.layers[index], cache) {
            (Layer::Linear(l), LayerCache::Linear { x }) => {
                let (dx, weight, bias) = l.backward(x, dy)?;
                Ok((dx, LayerGrad::Linear { weight, bias }))
            }
            (Layer::Spiking(s), cache @ LayerCache::Spiking { .. }) => spiking_backward(s, cache, dy, surrogate, instability),
            _ => Err(Error::InvalidConfig(format!("cache does not belong to layer {index}"))),
        }
    }

    /// Training forward over all layers. The input is converted to the
    /// network layout first if needed.
    pub fn forward_train(
        &mut self,
        x: &TemporalTensor<f64>,
        opts: ForwardOptions,
    ) -> Result<(TemporalTensor<f64>, Vec<LayerCache>)> {
        let (mut cur, _) = convert_layout(x, self.layout);
        let mut caches = Vec::with_capacity(self.layers.len());
        for i in 0..self.layers.len() {
            let (y, cache) = self.forward_layer(i, &cur, opts)?;
            caches.push(cache);
            cur = y;
        }
        Ok((cur, caches))
    }

    pub fn backward(&mut self, caches: &[LayerCache], dout: &TemporalTensor<f64>) -> Result<Gradients> {
        if caches.len() != self.layers.len() {
            return Err(Error::InvalidConfig("cache count differs from layer count".into()));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut instability = 0;
        let mut dy = dout.clone();
        for i in (0..self.layers.len()).rev() {
            let (dx, g) = self.backward_layer(i, &caches[i], &dy, &mut instability)?;
            grads.push(g);
            dy = dx;
        }
        grads.reverse();
        Ok(Gradients { layers: grads, input: dy, instability })
    }

    /// Freezes the network for inference: running statistics, folded and
    /// quantized kernels for quantized layers, all values rounded to `f32`.
    pub fn export(&self) -> Result<InferenceModel> {
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Linear(l) => Ok(ModelLayer::Linear(LinearLayer {
                    weight: l.weight.map(round_f32),
                    bias: l.bias.iter().copied().map(round_f32).collect(),
                })),
                Layer::Spiking(s) => {
                    let weights = s.params.effective(&s.cfg)?.into_owned();
                    if s.cfg.quantized {
                        let fused = fuse_bn(&s.params, &s.cfg, &s.threshold)?;
                        Ok(ModelLayer::NeuronQuantized {
                            order: s.cfg.order,
                            dilation: s.cfg.dilation,
                            weights: quantize_pow2(&fused.weights),
                            bias: fused.bias.into_iter().map(round_f32).collect(),
                        })
                    } else {
                        let t = &s.threshold;
                        let r = |v: &[f64]| v.iter().copied().map(round_f32).collect::<Vec<_>>();
                        Ok(ModelLayer::NeuronFloat {
                            dilation: s.cfg.dilation,
                            weights: weights.map(round_f32),
                            threshold: ThresholdParams {
                                gamma: r(&t.gamma),
                                beta: r(&t.beta),
                                running_mean: r(&t.running_mean),
                                running_var: r(&t.running_var),
                                eps: round_f32(t.eps),
                                momentum: t.momentum,
                            },
                        })
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        InferenceModel::new(layers)
    }
}

pub fn round_f32(v: f64) -> f64 {
    f64::from(v as f32)
}

fn spiking_forward(
    s: &mut SpikingLayer,
    x: &TemporalTensor<f64>,
    opts: ForwardOptions,
    surrogate: SurrogateConfig,
) -> Result<(TemporalTensor<f64>, LayerCache)> {
    let cfg = &s.cfg;
    if x.dims().c != cfg.channels {
        return Err(Error::ChannelMismatch { expected: cfg.channels, got: x.dims().c });
    }
    let w_eff = s.params.effective(cfg)?.into_owned();
    let d = cfg.dilation;
    let mut scratch = OpCounters::default();
    // the statistics pass always runs unquantized
    let raw = if s.engine.kind() == EngineKind::ShiftInt {
        conv_forward_direct(x, &w_eff, None, d, &mut scratch)?
    } else {
        s.engine.forward(x, Kernel::Float(&w_eff), None, d, &mut scratch)?
    };
    let (mean, var) = batch_statistics(&raw);
    if opts.update_running {
        s.threshold.update_running(&mean, &unbiased(&var, samples_per_channel(&raw)));
    }
    let (fmean, fvar, through_stats) = match opts.fusion {
        FusionStats::Batch => (mean.clone(), var.clone(), true),
        FusionStats::Running => (s.threshold.running_mean.clone(), s.threshold.running_var.clone(), false),
    };
    let fused = fuse_with_stats(&w_eff, &s.threshold, &fmean, &fvar);
    let (h, w_used) = if cfg.quantized {
        let q = quantize_pow2(&fused.weights);
        let w_used = dequantize(&q);
        let h = if s.engine.kind() == EngineKind::ShiftInt {
            s.engine.forward(x, Kernel::Shift(&q), Some(&fused.bias), d, &mut scratch)?
        } else {
            s.engine.forward(x, Kernel::Float(&w_used), Some(&fused.bias), d, &mut scratch)?
        };
        (h, w_used)
    } else {
        let h = if s.engine.kind() == EngineKind::ShiftInt {
            conv_forward_direct(x, &fused.weights, Some(&fused.bias), d, &mut scratch)?
        } else {
            s.engine.forward(x, Kernel::Float(&fused.weights), Some(&fused.bias), d, &mut scratch)?
        };
        (h, fused.weights.clone())
    };
    let spikes = match opts.spike {
        SpikeMode::Heaviside => h.map(heaviside),
        SpikeMode::Smooth => h.map(|v| surrogate.primitive(v)),
    };
    let (mean, var) = (fmean, fvar);
    Ok((spikes, LayerCache::Spiking { x: x.clone(), raw, mean, var, w_eff, fused, w_used, h, through_stats }))
}

fn spiking_backward(
    s: &mut SpikingLayer,
    cache: &LayerCache,
    ds: &TemporalTensor<f64>,
    surrogate: SurrogateConfig,
    instability: &mut u64,
) -> Result<(TemporalTensor<f64>, LayerGrad)> {
    let LayerCache::Spiking { x, raw, mean, var, w_eff, fused, w_used, h, through_stats } = cache else {
        unreachable!("caller matched the variant")
    };
    let cfg = &s.cfg;
    let (k, d) = (cfg.order, cfg.dilation);
    let dh = TemporalTensor::from_vec(
        h.dims().clone(),
        h.layout(),
        h.data().iter().zip(ds.data()).map(|(&hv, &g)| g * surrogate.derivative(hv)).collect(),
    )?;
    let g_bias = conv_backward_bias(&dh);
    let g_used = s.engine.backward_weight(x, &dh, k, d)?;
    let mut dx = s.engine.backward_input(&dh, w_used, d)?.into_vec();
    let g_fused = if cfg.quantized {
        quantize_backward(&g_used, &fused.weights, cfg.grad_mode, instability)?
    } else {
        g_used
    };

    let c_len = cfg.channels;
    let thr = &s.threshold;
    let mut g_w = Matrix::zeros(c_len, k);
    let mut g_gamma = vec![0.0; c_len];
    let mut d_mean = vec![0.0; c_len];
    let mut d_var = vec![0.0; c_len];
    for c in 0..c_len {
        let std = (var[c] + thr.eps).sqrt();
        let scale = thr.gamma[c] / std;
        let d_scale: f64 =
            (0..k).map(|i| g_fused.get(c, i) * w_eff.get(c, i)).sum::<f64>() - g_bias[c] * mean[c];
        g_gamma[c] = d_scale / std;
        for i in 0..k {
            g_w.set(c, i, scale * g_fused.get(c, i));
        }
        if *through_stats {
            d_mean[c] = -scale * g_bias[c];
            d_var[c] = -0.5 * d_scale * thr.gamma[c] / (std * std * std);
        }
    }
    if *through_stats {
        let count = samples_per_channel(raw) as f64;
        let ts = raw.time_stride();
        let mut d_raw = vec![0.0; raw.len()];
        for lane in raw.lanes() {
            let c = lane.c;
            for t in 0..raw.dims().t {
                let idx = lane.base + t * ts;
                d_raw[idx] = d_mean[c] / count + d_var[c] * 2.0 * (raw.data()[idx] - mean[c]) / count;
            }
        }
        let d_raw = raw.with_data(d_raw)?;
        let extra = conv_backward_weight(x, &d_raw, k, d)?;
        for (g, e) in g_w.data_mut().iter_mut().zip(extra.data()) {
            *g += e;
        }
        let dx_stats = conv_backward_input(&d_raw, w_eff, d)?;
        for (a, b) in dx.iter_mut().zip(dx_stats.data()) {
            *a += b;
        }
    }
    let weight = match cfg.weight_sharing {
        WeightSharing::ChannelWise => g_w,
        WeightSharing::SharedAcrossChannels => {
            Matrix::from_fn(1, k, |_, i| (0..c_len).map(|c| g_w.get(c, i)).sum())
        }
    };
    Ok((x.with_data(dx)?, LayerGrad::Spiking { weight, gamma: g_gamma, beta: g_bias }))
}

/// One layer of a frozen model.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelLayer {
    Linear(LinearLayer),
    /// Float kernel with its unfused threshold statistics.
    NeuronFloat { dilation: usize, weights: Matrix, threshold: ThresholdParams },
    /// Folded power-of-two kernel with the folded bias.
    NeuronQuantized { order: usize, dilation: usize, weights: ShiftWeights, bias: Vec<f64> },
}

impl ModelLayer {
    pub fn channels(&self) -> usize {
        match self {
            ModelLayer::Linear(l) => l.out_features(),
            ModelLayer::NeuronFloat { weights, .. } => weights.rows(),
            ModelLayer::NeuronQuantized { weights, .. } => weights.rows(),
        }
    }

    pub fn in_channels(&self) -> usize {
        match self {
            ModelLayer::Linear(l) => l.in_features(),
            other => other.channels(),
        }
    }

    pub fn is_neuron(&self) -> bool {
        !matches!(self, ModelLayer::Linear(_))
    }
}

/// Activity of one layer during inference.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerActivity {
    pub neuron: bool,
    pub ops: OpCounters,
    /// Fraction of non-zero inputs (synaptic layers only).
    pub input_firing_rate: f64,
}

#[derive(Clone, Debug)]
pub struct InferenceTrace {
    /// Output of the last layer (readout potentials).
    pub output: TemporalTensor<f64>,
    /// Spikes of every neuron layer, in order.
    pub spikes: Vec<TemporalTensor<f64>>,
    pub activity: Vec<LayerActivity>,
}

impl InferenceTrace {
    pub fn neuron_ops(&self) -> OpCounters {
        let mut total = OpCounters::default();
        self.activity.iter().filter(|a| a.neuron).for_each(|a| total.merge(&a.ops));
        total
    }

    /// Argmax over channels for every `(t, n)`; ties go to the lower index.
    pub fn predictions(&self) -> Vec<usize> {
        argmax_channels(&self.output)
    }
}

pub fn argmax_channels(x: &TemporalTensor<f64>) -> Vec<usize> {
    let dims = x.dims();
    let mut out = Vec::with_capacity(dims.t * dims.n);
    for t in 0..dims.t {
        for n in 0..dims.n {
            let mut best = 0;
            for c in 1..dims.c {
                if x.get(t, n, c, 0) > x.get(t, n, best, 0) {
                    best = c;
                }
            }
            out.push(best);
        }
    }
    out
}

/// A frozen layer stack, the in-memory form of a model file.
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceModel {
    pub layers: Vec<ModelLayer>,
}

impl InferenceModel {
    pub fn new(layers: Vec<ModelLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyNetwork);
        }
        for pair in layers.windows(2) {
            if pair[0].channels() != pair[1].in_channels() {
                return Err(Error::ChannelMismatch { expected: pair[1].in_channels(), got: pair[0].channels() });
            }
        }
        Ok(InferenceModel { layers })
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels()
    }

    pub fn is_quantized(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, ModelLayer::NeuronQuantized { .. }))
    }

    /// Folds every float neuron's threshold into its kernel and quantizes
    /// the result to powers of two. Returns the new model and, per neuron
    /// layer, the largest relative weight error `|Q(w) − w| / |w|`.
    pub fn quantize(&self) -> Result<(InferenceModel, Vec<f64>)> {
        if self.is_quantized() {
            return Err(Error::InvalidConfig("model is already quantized".into()));
        }
        let mut errors = Vec::new();
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer {
                ModelLayer::Linear(l) => Ok(ModelLayer::Linear(l.clone())),
                ModelLayer::NeuronFloat { dilation, weights, threshold } => {
                    let cfg = NeuronConfig::new(weights.rows(), weights.cols(), *dilation)?;
                    let params = NeuronParams::new(weights.clone())?;
                    let fused = fuse_bn(&params, &cfg, threshold)?;
                    let q = quantize_pow2(&fused.weights);
                    let deq = dequantize(&q);
                    let worst = fused
                        .weights
                        .data()
                        .iter()
                        .zip(deq.data())
                        .filter(|(w, _)| **w != 0.0)
                        .map(|(w, qv)| ((qv - w) / w).abs())
                        .fold(0.0, f64::max);
                    errors.push(worst);
                    Ok(ModelLayer::NeuronQuantized {
                        order: weights.cols(),
                        dilation: *dilation,
                        weights: q,
                        bias: fused.bias.into_iter().map(round_f32).collect(),
                    })
                }
                ModelLayer::NeuronQuantized { .. } => unreachable!("checked above"),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((InferenceModel::new(layers)?, errors))
    }

    /// Runs the model. Quantized neuron layers use shifts when `engine` is
    /// [`EngineKind::ShiftInt`]; float neuron layers then fall back to the
    /// direct loop.
    pub fn forward(&self, x: &TemporalTensor<f64>, engine: EngineKind) -> Result<InferenceTrace> {
        if x.dims().c != self.in_channels() {
            return Err(Error::ChannelMismatch { expected: self.in_channels(), got: x.dims().c });
        }
        let mut cur = x.clone();
        let mut spikes = Vec::new();
        let mut activity = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            match layer {
                ModelLayer::Linear(l) => {
                    let mut stats = SynapseStats::default();
                    cur = l.forward(&cur, &mut stats)?;
                    activity.push(LayerActivity { neuron: false, ops: stats.ops, input_firing_rate: stats.firing_rate() });
                }
                ModelLayer::NeuronFloat { dilation, weights, threshold } => {
                    let kind = if engine == EngineKind::ShiftInt { EngineKind::DirectLoop } else { engine };
                    let mut ops = OpCounters::default();
                    let h = ConvEngine::new(kind).forward(&cur, Kernel::Float(weights), None, *dilation, &mut ops)?;
                    let mut thr = threshold.clone();
                    cur = fire(&h, &mut thr, false)?;
                    // threshold subtraction
                    ops.adds += h.len() as u64;
                    spikes.push(cur.clone());
                    activity.push(LayerActivity { neuron: true, ops, input_firing_rate: 0.0 });
                }
                ModelLayer::NeuronQuantized { dilation, weights, bias, .. } => {
                    let mut ops = OpCounters::default();
                    let h = ConvEngine::new(engine).forward(&cur, Kernel::Shift(weights), Some(bias), *dilation, &mut ops)?;
                    cur = h.map(heaviside);
                    spikes.push(cur.clone());
                    activity.push(LayerActivity { neuron: true, ops, input_firing_rate: 0.0 });
                }
            }
        }
        Ok(InferenceTrace { output: cur, spikes, activity })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::SurrogateConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_net(quantized: bool, rng: &mut ChaCha8Rng) -> Network {
        let cfg = NeuronConfig::new(3, 2, 2).unwrap().quantized(quantized);
        let layers = vec![
            Layer::Linear(LinearLayer::random(2, 3, rng)),
            Layer::Spiking(SpikingLayer::new(cfg.clone(), NeuronParams::uniform_init(&cfg, rng)).unwrap()),
            Layer::Linear(LinearLayer::random(3, 2, rng)),
        ];
        Network::new(layers, SurrogateConfig::default()).unwrap()
    }

    #[test]
    fn rejects_mismatched_stack() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layers = vec![Layer::Linear(LinearLayer::random(2, 3, &mut rng)), Layer::Linear(LinearLayer::random(4, 2, &mut rng))];
        assert!(Network::new(layers, SurrogateConfig::default()).is_err());
        assert!(matches!(Network::new(vec![], SurrogateConfig::default()), Err(Error::EmptyNetwork)));
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = small_net(false, &mut rng);
        let p = net.params_flat();
        assert_eq!(p.len(), net.num_params());
        assert_eq!(net.param_coords().len(), p.len());
        let shifted: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
        net.set_params_flat(&shifted).unwrap();
        assert_eq!(net.params_flat(), shifted);
    }

    #[test]
    fn linear_counts_accumulates_for_spikes() {
        let l = LinearLayer::new(Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(), vec![0.5, -0.5]).unwrap();
        let x = TemporalTensor::from_vec(Dims::new(1, 1, 3), Layout::TimeFirst, vec![1.0, 0.0, 1.0]).unwrap();
        let mut stats = SynapseStats::default();
        let y = l.forward(&x, &mut stats).unwrap();
        assert_eq!(y.data(), &[4.5, 9.5]);
        assert_eq!(stats.ops.muls, 0);
        assert_eq!(stats.ops.adds, 4);
        assert!((stats.firing_rate() - 2.0 / 3.0).abs() < 1e-15);
        let real = x.map(|v| v * 0.5);
        let mut stats = SynapseStats::default();
        l.forward(&real, &mut stats).unwrap();
        assert_eq!(stats.ops.muls, 6);
    }

    #[test]
    fn linear_time_last_matches_time_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = LinearLayer::random(3, 4, &mut rng);
        let x = TemporalTensor::from_fn(Dims::new(5, 2, 3), Layout::TimeFirst, |_, _, _, _| rng.gen_range(-1.0..1.0)).unwrap();
        let (xl, _) = convert_layout(&x, Layout::TimeLast);
        let a = l.forward(&x, &mut SynapseStats::default()).unwrap();
        let b = l.forward(&xl, &mut SynapseStats::default()).unwrap();
        assert_eq!(a.to_time_first_vec(), b.to_time_first_vec());
    }

    #[test]
    fn export_quantized_has_power_of_two_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = small_net(true, &mut rng);
        let model = net.export().unwrap();
        assert!(model.is_quantized());
        assert!(model.quantize().is_err());
        let x = TemporalTensor::from_fn(Dims::new(6, 2, 2), Layout::TimeFirst, |_, _, _, _| rng.gen_range(-1.0..1.0)).unwrap();
        let trace = model.forward(&x, EngineKind::ShiftInt).unwrap();
        assert_eq!(trace.neuron_ops().muls, 0);
        assert!(trace.spikes[0].data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}
