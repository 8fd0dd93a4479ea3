//! Energy and inference-memory estimates under a 45 nm per-operation cost
//! model.

use std::fmt;

use crate::engines::OpCounters;
use crate::error::{Error, Result};

/// Per-operation energies in picojoules.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyModel {
    pub e_mul_fp32: f64,
    pub e_add_fp32: f64,
    pub e_shift_fix32: f64,
    pub e_mac: f64,
    pub e_ac: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel { e_mul_fp32: 3.7, e_add_fp32: 0.9, e_shift_fix32: 0.13, e_mac: 4.6, e_ac: 0.9 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NeuronKind {
    /// Dense `T × T` parallel spiking neuron.
    Psn,
    /// Channel-wise neuron with power-of-two weights.
    ShiftChannelWise,
}

/// Taps evaluated by a causal order-k convolution over T steps (d = 1):
/// `(T + (1−k)/2)·k`.
pub fn causal_taps(t_len: u64, k: u64) -> u64 {
    t_len * k - k * (k.saturating_sub(1)) / 2
}

/// Inference operation counts of one neuron over `T` steps.
pub fn neuron_ops(kind: NeuronKind, t_len: u64, k: u64) -> Result<OpCounters> {
    match kind {
        NeuronKind::Psn => Ok(OpCounters { adds: t_len * t_len + t_len, muls: t_len * t_len, ..Default::default() }),
        NeuronKind::ShiftChannelWise => {
            if k == 0 || k > t_len {
                return Err(Error::InvalidConfig(format!("order k={k} must lie in [1, T={t_len}]")));
            }
            let taps = causal_taps(t_len, k);
            Ok(OpCounters { adds: taps + t_len, shifts: taps, ..Default::default() })
        }
    }
}

/// Energy of a set of neuron-layer operations, in picojoules.
pub fn ops_energy(ops: &OpCounters, model: &EnergyModel) -> f64 {
    ops.muls as f64 * model.e_mul_fp32 + ops.adds as f64 * model.e_add_fp32 + ops.shifts as f64 * model.e_shift_fix32
}

/// Closed-form energy of one neuron in picojoules:
/// PSN `(e_mul+e_add)·T² + e_add·T`, channel-wise `(e_shift+e_add)·(T+(1−k)/2)·k + e_add·T`.
pub fn neuron_energy(kind: NeuronKind, t_len: u64, k: u64, model: &EnergyModel) -> Result<f64> {
    let t = t_len as f64;
    match kind {
        NeuronKind::Psn => Ok((model.e_mul_fp32 + model.e_add_fp32) * t * t + model.e_add_fp32 * t),
        NeuronKind::ShiftChannelWise => {
            if k == 0 || k > t_len {
                return Err(Error::InvalidConfig(format!("order k={k} must lie in [1, T={t_len}]")));
            }
            let kf = k as f64;
            Ok((model.e_shift_fix32 + model.e_add_fp32) * (t + (1.0 - kf) / 2.0) * kf + model.e_add_fp32 * t)
        }
    }
}

/// Spike-driven synaptic operations of one layer: `fr · T · FLOPs`.
pub fn sops(firing_rate: f64, t_len: u64, flops: f64) -> f64 {
    firing_rate * t_len as f64 * flops
}

/// `e_mac · FLOPs(first layer) + e_ac · Σ SOPs`, in picojoules.
pub fn synaptic_energy(first_layer_flops: f64, sops_per_layer: &[f64], model: &EnergyModel) -> Result<f64> {
    if first_layer_flops < 0.0 || sops_per_layer.iter().any(|&s| s < 0.0) {
        return Err(Error::InvalidConfig("operation counts must be non-negative".into()));
    }
    Ok(model.e_mac * first_layer_flops + model.e_ac * sops_per_layer.iter().sum::<f64>())
}

/// Operation counts of one network, split into neuron and synaptic layers.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkOps {
    pub label: String,
    pub neuron_muls: f64,
    pub neuron_adds: f64,
    pub neuron_shifts: f64,
    pub first_layer_flops: f64,
    pub sops: f64,
}

impl NetworkOps {
    pub fn from_counters(label: &str, neuron: &OpCounters, first_layer_flops: f64, sops: f64) -> Self {
        NetworkOps {
            label: label.to_string(),
            neuron_muls: neuron.muls as f64,
            neuron_adds: neuron.adds as f64,
            neuron_shifts: neuron.shifts as f64,
            first_layer_flops,
            sops,
        }
    }
}

/// Per-image operation counts of the sequential CIFAR-100 networks (T = 32,
/// k = 16), three significant figures.
pub fn sequential_cifar100_counts() -> [NetworkOps; 2] {
    [
        NetworkOps {
            label: "PSN".into(),
            neuron_muls: 1.91e7,
            neuron_adds: 1.97e7,
            neuron_shifts: 0.0,
            first_layer_flops: 0.041e6,
            sops: 3.194e6,
        },
        NetworkOps {
            label: "Shift channel-wise".into(),
            neuron_muls: 0.0,
            neuron_adds: 7.92e6,
            neuron_shifts: 7.32e6,
            first_layer_flops: 0.041e6,
            sops: 2.660e6,
        },
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyRow {
    pub ops: NetworkOps,
    pub neuron_uj: f64,
    pub synaptic_uj: f64,
    pub total_uj: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    pub rows: Vec<EnergyRow>,
}

pub fn network_energy_report(entries: &[NetworkOps], model: &EnergyModel) -> Result<EnergyReport> {
    let rows = entries
        .iter()
        .map(|e| {
            let neuron_pj =
                e.neuron_muls * model.e_mul_fp32 + e.neuron_adds * model.e_add_fp32 + e.neuron_shifts * model.e_shift_fix32;
            let synaptic_pj = synaptic_energy(e.first_layer_flops, &[e.sops], model)?;
            Ok(EnergyRow {
                ops: e.clone(),
                neuron_uj: neuron_pj * 1e-6,
                synaptic_uj: synaptic_pj * 1e-6,
                total_uj: (neuron_pj + synaptic_pj) * 1e-6,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnergyReport { rows })
}

impl fmt::Display for EnergyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<20} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
            "network", "mul", "add", "shift", "neuron_uJ", "flops_1", "sops", "synaptic_uJ", "total_uJ"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<20} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4} {:>12.4e} {:>12.4e} {:>12.4} {:>12.4}",
                r.ops.label,
                r.ops.neuron_muls,
                r.ops.neuron_adds,
                r.ops.neuron_shifts,
                r.neuron_uj,
                r.ops.first_layer_flops,
                r.ops.sops,
                r.synaptic_uj,
                r.total_uj
            )?;
        }
        Ok(())
    }
}

/// One stateful neuron layer as seen by the memory estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NeuronLayerShape {
    pub channels: usize,
    pub order: usize,
    pub dilation: usize,
    /// Spatial sites per sample (1 for sequence models).
    pub sites: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerMemory {
    pub window: usize,
    pub elements: usize,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryEstimate {
    pub layers: Vec<LayerMemory>,
    pub total_elements: usize,
    pub total_bytes: usize,
}

/// Past input steps a layer must keep for step-by-step inference.
pub fn stored_window(order: usize, dilation: usize) -> usize {
    order.saturating_sub(1) * dilation + 1
}

/// Activation-window storage for step-by-step inference of one sample.
/// Parameters and runtime overheads are not included.
pub fn inference_memory_estimate(layers: &[NeuronLayerShape], element_bytes: usize) -> MemoryEstimate {
    let layers: Vec<LayerMemory> = layers
        .iter()
        .map(|l| {
            let window = stored_window(l.order, l.dilation);
            let elements = window * l.channels * l.sites;
            LayerMemory { window, elements, bytes: elements * element_bytes }
        })
        .collect();
    let total_elements = layers.iter().map(|l| l.elements).sum();
    MemoryEstimate { total_bytes: total_elements * element_bytes, total_elements, layers }
}
