//! Surrogate-gradient training at desk scale.
//!
//! Synthetic long-dependency tasks, cross-entropy over a per-step readout,
//! SGD and Adam, the training loop with quantization-aware forward passes,
//! and a central finite-difference gradient checker.

use std::f64::consts::PI;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engines::EngineKind;
use crate::error::{Error, Result};
use crate::network::{
    argmax_channels, FusionStats, ForwardOptions, InferenceTrace, Layer, LinearLayer, Network, ParamCoord, SpikeMode,
    SpikingLayer,
};
use crate::neuron::{sawtooth_schedule, NeuronConfig, NeuronParams};
use crate::quant::{quantize_pow2, QuantGradMode};
use crate::tensor::{Dims, Layout, TemporalTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SurrogateKind {
    #[default]
    Arctan,
    Rational,
}

impl SurrogateKind {
    pub fn name(self) -> &'static str {
        match self {
            SurrogateKind::Arctan => "arctan",
            SurrogateKind::Rational => "rational",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "arctan" => Some(SurrogateKind::Arctan),
            "rational" => Some(SurrogateKind::Rational),
            _ => None,
        }
    }
}

/// Smooth stand-in for the derivative of the Heaviside step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateConfig {
    pub kind: SurrogateKind,
    pub alpha: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig { kind: SurrogateKind::Arctan, alpha: 2.0 }
    }
}

impl SurrogateConfig {
    pub fn new(kind: SurrogateKind, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("surrogate alpha must be positive, got {alpha}")));
        }
        Ok(SurrogateConfig { kind, alpha })
    }

    /// `σ'(x)`.
    pub fn derivative(&self, x: f64) -> f64 {
        let a = self.alpha;
        match self.kind {
            SurrogateKind::Arctan => {
                let z = PI / 2.0 * a * x;
                a / (2.0 * (1.0 + z * z))
            }
            SurrogateKind::Rational => 1.0 / (1.0 + a * x * x),
        }
    }

    /// A primitive of [`derivative`](Self::derivative).
    pub fn primitive(&self, x: f64) -> f64 {
        let a = self.alpha;
        match self.kind {
            SurrogateKind::Arctan => (PI / 2.0 * a * x).atan() / PI + 0.5,
            SurrogateKind::Rational => (a.sqrt() * x).atan() / a.sqrt(),
        }
    }
}

/// Replaces `Θ'` elementwise in backpropagation through firing.
pub fn spike_backward(x: &TemporalTensor<f64>, cfg: &SurrogateConfig) -> TemporalTensor<f64> {
    x.map(|v| cfg.derivative(v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    /// `y[t] = x[t] XOR x[t − L]`.
    DelayedXor,
    /// `y[t] = x[t] XOR x[t − ⌊L/2⌋] XOR x[t − L]`.
    TemporalParity,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::DelayedXor => "delayed-xor",
            TaskKind::TemporalParity => "temporal-parity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "delayed-xor" => Some(TaskKind::DelayedXor),
            "temporal-parity" => Some(TaskKind::TemporalParity),
            _ => None,
        }
    }
}

/// Random binary streams labelled at every step that has a full history.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyTask {
    pub kind: TaskKind,
    pub lag: usize,
    pub steps: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl ToyTask {
    pub fn delayed_xor(lag: usize, steps: usize) -> Self {
        ToyTask { kind: TaskKind::DelayedXor, lag, steps, train_size: 512, test_size: 256, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps <= self.lag {
            return Err(Error::InvalidConfig(format!("T={} leaves no labelled step for lag {}", self.steps, self.lag)));
        }
        if self.train_size == 0 || self.test_size == 0 {
            return Err(Error::InvalidConfig("dataset sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn label(&self, bits: &[u8], t: usize) -> Option<u8> {
        if t < self.lag {
            return None;
        }
        Some(match self.kind {
            TaskKind::DelayedXor => bits[t] ^ bits[t - self.lag],
            TaskKind::TemporalParity => bits[t] ^ bits[t - self.lag / 2] ^ bits[t - self.lag],
        })
    }

    pub fn generate(&self, samples: usize, rng: &mut impl Rng) -> Result<Dataset> {
        self.validate()?;
        let t_len = self.steps;
        let streams: Vec<Vec<u8>> = (0..samples).map(|_| (0..t_len).map(|_| rng.gen_range(0..2u8)).collect()).collect();
        let inputs = TemporalTensor::from_fn(Dims::new(t_len, samples, 1), Layout::TimeFirst, |t, n, _, _| {
            f64::from(streams[n][t])
        })?;
        let mut labels = Vec::with_capacity(t_len * samples);
        for t in 0..t_len {
            for stream in &streams {
                labels.push(self.label(stream, t));
            }
        }
        Ok(Dataset { inputs, labels })
    }

    /// Training and test sets drawn from independent streams of `seed`.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let train = self.generate(self.train_size, &mut rng)?;
        let test = self.generate(self.test_size, &mut rng)?;
        Ok((train, test))
    }
}

/// Inputs `(T, N, 1)` and labels indexed `t·N + n`; `None` marks unlabelled steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: TemporalTensor<f64>,
    pub labels: Vec<Option<u8>>,
}

impl Dataset {
    pub fn samples(&self) -> usize {
        self.inputs.dims().n
    }

    /// Samples `indices` in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let dims = self.inputs.dims();
        let n = indices.len();
        let inputs = TemporalTensor::from_fn(Dims::new(dims.t, n, dims.c), Layout::TimeFirst, |t, j, c, _| {
            self.inputs.get(t, indices[j], c, 0)
        })?;
        let mut labels = Vec::with_capacity(dims.t * n);
        for t in 0..dims.t {
            for &i in indices {
                labels.push(self.labels[t * dims.n + i]);
            }
        }
        Ok(Dataset { inputs, labels })
    }
}

/// Mean cross-entropy of the per-step readout over labelled steps.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: TemporalTensor<f64>,
    pub correct: usize,
    pub labelled: usize,
}

pub fn cross_entropy(logits: &TemporalTensor<f64>, labels: &[Option<u8>]) -> Result<LossOutput> {
    let dims = logits.dims();
    if labels.len() != dims.t * dims.n {
        return Err(Error::ShapeMismatch(format!("{} labels for {} steps", labels.len(), dims.t * dims.n)));
    }
    let labelled = labels.iter().flatten().count();
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    let mut correct = 0;
    let mut probs = vec![0.0; dims.c];
    for t in 0..dims.t {
        for n in 0..dims.n {
            let Some(y) = labels[t * dims.n + n] else { continue };
            let y = usize::from(y);
            let max = (0..dims.c).map(|c| logits.get(t, n, c, 0)).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (c, p) in probs.iter_mut().enumerate() {
                *p = (logits.get(t, n, c, 0) - max).exp();
                sum += *p;
            }
            loss -= (probs[y] / sum).ln();
            let mut best = 0;
            for c in 0..dims.c {
                if logits.get(t, n, c, 0) > logits.get(t, n, best, 0) {
                    best = c;
                }
                let target = if c == y { 1.0 } else { 0.0 };
                grad[logits.offset(t, n, c, 0)] = (probs[c] / sum - target) / labelled as f64;
            }
            correct += usize::from(best == y);
        }
    }
    Ok(LossOutput { loss: loss / labelled.max(1) as f64, grad: logits.with_data(grad)?, correct, labelled })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(OptimizerKind::Sgd),
            "adam" => Some(OptimizerKind::Adam),
            _ => None,
        }
    }
}

/// Plain SGD or Adam with `β = (0.9, 0.999)`, `ε = 1e-8`, no weight decay.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: usize) -> Self {
        Optimizer { kind, lr, m: vec![0.0; params], v: vec![0.0; params], step: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => params.iter_mut().zip(grads).for_each(|(p, g)| *p -= self.lr * g),
            OptimizerKind::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                self.step += 1;
                let c1 = 1.0 - B1.powi(self.step);
                let c2 = 1.0 - B2.powi(self.step);
                for i in 0..params.len() {
                    self.m[i] = B1 * self.m[i] + (1.0 - B1) * grads[i];
                    self.v[i] = B2 * self.v[i] + (1.0 - B2) * grads[i] * grads[i];
                    params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DilationSchedule {
    Sawtooth,
    Fixed(usize),
}

/// Architecture of the task model:
/// `Linear(1→C) → [neuron → Linear(C→C)] × (layers−1) → neuron → Linear(C→2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub layers: usize,
    pub order: usize,
    pub dilation: DilationSchedule,
    pub shared_weights: bool,
    pub quantized: bool,
    pub grad_mode: QuantGradMode,
    pub surrogate: SurrogateConfig,
    pub engine: EngineKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 16,
            layers: 3,
            order: 2,
            dilation: DilationSchedule::Sawtooth,
            shared_weights: false,
            quantized: false,
            grad_mode: QuantGradMode::WholeSte,
            surrogate: SurrogateConfig::default(),
            engine: EngineKind::DirectLoop,
        }
    }
}

impl ModelConfig {
    pub fn dilations(&self) -> Vec<usize> {
        match self.dilation {
            DilationSchedule::Sawtooth => sawtooth_schedule(self.layers),
            DilationSchedule::Fixed(d) => vec![d; self.layers],
        }
    }

    pub fn build_seeded(&self, seed: u64) -> Result<Network> {
        self.build(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn build(&self, rng: &mut impl Rng) -> Result<Network> {
        if self.layers == 0 {
            return Err(Error::EmptyNetwork);
        }
        let c = self.channels;
        let mut layers = vec![Layer::Linear(LinearLayer::random(1, c, rng))];
        for (l, d) in self.dilations().into_iter().enumerate() {
            let mut cfg = NeuronConfig::new(c, self.order, d)?.quantized(self.quantized);
            cfg.grad_mode = self.grad_mode;
            if self.shared_weights {
                cfg = cfg.shared();
            }
            let params = NeuronParams::uniform_init(&cfg, rng);
            let mut layer = SpikingLayer::new(cfg, params)?;
            layer.engine = crate::engines::ConvEngine::new(self.engine);
            layers.push(Layer::Spiking(layer));
            let out = if l + 1 == self.layers { 2 } else { c };
            layers.push(Layer::Linear(LinearLayer::random(c, out, rng)));
        }
        Network::new(layers, self.surrogate)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub fusion: FusionStats,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.01,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            fusion: FusionStats::Batch,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

impl fmt::Display for EpochMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={} loss={:.6} train_acc={:.4} test_acc={:.4}", self.epoch, self.loss, self.train_acc, self.test_acc)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochMetrics>,
    /// Zero weights met by the round-STE gradient over the whole run.
    pub instability: u64,
}

/// Accuracy of the exported model, exactly as it would run after deployment.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<(f64, InferenceTrace)> {
    let trace = net.export()?.forward(&data.inputs, EngineKind::DirectLoop)?;
    let preds = argmax_channels(&trace.output);
    let (mut correct, mut total) = (0usize, 0usize);
    for (p, y) in preds.iter().zip(&data.labels) {
        if let Some(y) = y {
            total += 1;
            correct += usize::from(*p == usize::from(*y));
        }
    }
    Ok((correct as f64 / total.max(1) as f64, trace))
}

/// Minibatch training. `on_epoch` sees every epoch's metrics as they arrive.
pub fn train(
    net: &mut Network,
    task: &ToyTask,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    if cfg.batch_size == 0 || cfg.learning_rate.is_nan() || cfg.learning_rate <= 0.0 {
        return Err(Error::InvalidConfig("batch size and learning rate must be positive".into()));
    }
    let (train_set, test_set) = task.datasets()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, net.num_params());
    let opts = ForwardOptions { spike: SpikeMode::Heaviside, update_running: true, fusion: cfg.fusion };
    let mut order: Vec<usize> = (0..train_set.samples()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut instability = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut labelled, mut batches) = (0.0, 0, 0, 0);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_set.subset(chunk)?;
            let (logits, caches) = net.forward_train(&batch.inputs, opts)?;
            let out = cross_entropy(&logits, &batch.labels)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss became {} at epoch {epoch} batch {b}; training collapsed",
                    out.loss
                )));
            }
            let grads = net.backward(&caches, &out.grad)?;
            instability += grads.instability;
            let flat = grads.flat();
            if let Some(i) = flat.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {} is {} at epoch {epoch} batch {b}",
                    net.param_coords()[i],
                    flat[i]
                )));
            }
            let mut params = net.params_flat();
            opt.step(&mut params, &flat);
            net.set_params_flat(&params)?;
            loss_sum += out.loss;
            correct += out.correct;
            labelled += out.labelled;
            batches += 1;
        }
        let (test_acc, _) = evaluate(net, &test_set)?;
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            loss: loss_sum / batches as f64,
            train_acc: correct as f64 / labelled.max(1) as f64,
            test_acc,
        };
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok(TrainOutcome { history, instability })
}

/// One analytic-versus-numeric gradient comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradMismatch {
    pub coord: ParamCoord,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<ParamCoord>,
    /// Mismatches above tolerance that count against the check.
    pub failures: Vec<GradMismatch>,
    /// Mismatches on straight-through coordinates whose perturbation moves a
    /// quantized weight across a power-of-two boundary; reported only.
    pub flagged: Vec<GradMismatch>,
    pub non_finite: Vec<ParamCoord>,
    pub passed: bool,
}

/// Relative error with a floor so that near-zero gradients compare absolutely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central finite differences of the smoothed loss against backpropagation,
/// over every parameter. Spikes are replaced by the surrogate's primitive in
/// both paths and the batch statistics are recomputed at every evaluation.
///
/// For quantized layers the analytic weight gradient is straight-through by
/// construction; mismatches on coordinates whose ±h perturbation changes the
/// quantized kernel are flagged instead of failed.
pub fn finite_diff_check(net: &Network, data: &Dataset, h: f64, tol: f64) -> Result<GradCheckReport> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidConfig(format!("step h must be positive, got {h}")));
    }
    let opts = ForwardOptions { spike: SpikeMode::Smooth, update_running: false, fusion: FusionStats::Batch };
    let mut work = net.clone();
    let (logits, caches) = work.forward_train(&data.inputs, opts)?;
    let out = cross_entropy(&logits, &data.labels)?;
    let analytic = work.backward(&caches, &out.grad)?.flat();
    let coords = work.param_coords();
    let base = work.params_flat();

    let mut report = GradCheckReport {
        checked: base.len(),
        max_rel_error: 0.0,
        worst: None,
        failures: Vec::new(),
        flagged: Vec::new(),
        non_finite: Vec::new(),
        passed: true,
    };
    let mut probe = base.clone();
    for i in 0..base.len() {
        let mut eval = |v: f64| -> Result<(f64, Vec<u8>)> {
            probe[i] = v;
            work.set_params_flat(&probe)?;
            let (logits, caches) = work.forward_train(&data.inputs, opts)?;
            let signature = quantized_signature(&work, &caches);
            Ok((cross_entropy(&logits, &data.labels)?.loss, signature))
        };
        let (lp, sig_p) = eval(base[i] + h)?;
        let (lm, sig_m) = eval(base[i] - h)?;
        probe[i] = base[i];
        let numeric = (lp - lm) / (2.0 * h);
        if !analytic[i].is_finite() || !numeric.is_finite() {
            report.non_finite.push(coords[i].clone());
            continue;
        }
        let rel = relative_error(analytic[i], numeric);
        let mismatch = GradMismatch { coord: coords[i].clone(), analytic: analytic[i], numeric, rel_error: rel };
        if rel > tol && sig_p != sig_m {
            report.flagged.push(mismatch);
            continue;
        }
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some(coords[i].clone());
        }
        if rel > tol {
            report.failures.push(mismatch);
        }
    }
    report.passed = report.failures.is_empty() && report.non_finite.is_empty();
    Ok(report)
}

/// Sign and exponent of every quantized kernel used in a forward pass.
fn quantized_signature(net: &Network, caches: &[crate::network::LayerCache]) -> Vec<u8> {
    let mut sig = Vec::new();
    for (layer, cache) in net.layers().iter().zip(caches) {
        if let (Layer::Spiking(s), crate::network::LayerCache::Spiking { fused, .. }) = (layer, cache) {
            if s.cfg.quantized {
                let q = quantize_pow2(&fused.weights);
                sig.extend(q.signs().iter().map(|&v| v as u8));
                sig.extend(q.exponents().iter().map(|&v| v as u8));
            }
        }
    }
    sig
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_values() {
        let a = SurrogateConfig::default();
        assert_eq!(a.derivative(0.0), 1.0);
        assert!(a.derivative(1e6) < 1e-10 && a.derivative(-1e6) < 1e-10);
        let r = SurrogateConfig::new(SurrogateKind::Rational, 10.0).unwrap();
        assert_eq!(r.derivative(0.0), 1.0);
        assert!(SurrogateConfig::new(SurrogateKind::Arctan, 0.0).is_err());
    }

    #[test]
    fn primitives_differentiate_to_derivative() {
        for cfg in [SurrogateConfig::default(), SurrogateConfig::new(SurrogateKind::Rational, 10.0).unwrap()] {
            for x in [-2.0, -0.3, 0.0, 0.1, 1.7] {
                let h = 1e-6;
                let num = (cfg.primitive(x + h) - cfg.primitive(x - h)) / (2.0 * h);
                assert!((num - cfg.derivative(x)).abs() < 1e-8, "{:?} x={x}", cfg.kind);
            }
        }
    }

    #[test]
    fn xor_labels() {
        let task = ToyTask::delayed_xor(2, 5);
        let bits = [1, 0, 1, 1, 0];
        let labels: Vec<_> = (0..5).map(|t| task.label(&bits, t)).collect();
        assert_eq!(labels, vec![None, None, Some(0), Some(1), Some(1)]);
        let parity = ToyTask { kind: TaskKind::TemporalParity, ..ToyTask::delayed_xor(4, 6) };
        assert_eq!(parity.label(&[1, 0, 1, 0, 1, 1], 4), Some(1));
        assert!(ToyTask::delayed_xor(5, 5).validate().is_err());
    }

    #[test]
    fn cross_entropy_gradient() {
        let logits = TemporalTensor::from_vec(Dims::new(2, 1, 2), Layout::TimeFirst, vec![0.3, -0.2, 1.0, 2.0]).unwrap();
        let labels = [Some(0), None];
        let out = cross_entropy(&logits, &labels).unwrap();
        let p0 = 0.3f64.exp() / (0.3f64.exp() + (-0.2f64).exp());
        assert!((out.loss + p0.ln()).abs() < 1e-15);
        assert!((out.grad.data()[0] - (p0 - 1.0)).abs() < 1e-15);
        assert_eq!(&out.grad.data()[2..], &[0.0, 0.0]);
        assert_eq!((out.correct, out.labelled), (1, 1));
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, 2);
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[2.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-8 && (p[1] + 0.9).abs() < 1e-8);
    }

    #[test]
    fn model_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = ModelConfig::default().build(&mut rng).unwrap();
        assert_eq!(net.layers().len(), 7);
        let d: Vec<_> = net.spiking_layers().map(|s| s.cfg.dilation).collect();
        assert_eq!(d, vec![1, 2, 3]);
    }

    #[test]
    fn smoothed_model_gradients_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = ModelConfig { channels: 3, layers: 2, ..ModelConfig::default() };
        let net = cfg.build(&mut rng).unwrap();
        let task = ToyTask::delayed_xor(2, 6);
        let data = task.generate(4, &mut rng).unwrap();
        let report = finite_diff_check(&net, &data, 1e-5, 1e-4).unwrap();
        assert!(report.passed, "{:?}", report.failures);
    }
}
