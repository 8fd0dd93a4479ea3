//! Reference neurons: the full parallel spiking neuron (`H = W·X` with a
//! dense `T × T` weight) and the sliding variant with one length-k kernel
//! shared by every channel.

use crate::engines::OpCounters;
use crate::error::{Error, Result};
use crate::neuron::heaviside;
use crate::tensor::{Matrix, TemporalTensor};

/// Threshold used for every step when none is given.
pub const DEFAULT_PSN_THRESHOLD: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PsnParams {
    /// `T × T`, row `t` mixes all inputs into `H[t]`.
    pub weights: Matrix,
    pub thresholds: Vec<f64>,
}

impl PsnParams {
    pub fn new(weights: Matrix, thresholds: Vec<f64>) -> Result<Self> {
        if weights.rows() != weights.cols() || thresholds.len() != weights.rows() {
            return Err(Error::ShapeMismatch(format!(
                "PSN needs a square weight and one threshold per step, got {}x{} and {}",
                weights.rows(),
                weights.cols(),
                thresholds.len()
            )));
        }
        Ok(PsnParams { weights, thresholds })
    }

    pub fn with_default_threshold(weights: Matrix) -> Result<Self> {
        let t = weights.rows();
        Self::new(weights, vec![DEFAULT_PSN_THRESHOLD; t])
    }

    pub fn steps(&self) -> usize {
        self.weights.rows()
    }
}

/// `H = W·X` per lane, weights shared across channels.
///
/// Counts `T²` MULs and `T²` ADDs per lane.
pub fn psn_charge(x: &TemporalTensor<f64>, p: &PsnParams, counters: &mut OpCounters) -> Result<TemporalTensor<f64>> {
    let t_len = x.dims().t;
    if t_len != p.steps() {
        return Err(Error::ShapeMismatch(format!("input has T={t_len}, PSN was built for T={}", p.steps())));
    }
    let ts = x.time_stride();
    let src = x.data();
    let mut out = vec![0.0; x.len()];
    for lane in x.lanes() {
        for t in 0..t_len {
            let row = p.weights.row(t);
            let mut acc = 0.0;
            for (i, &w) in row.iter().enumerate() {
                acc += w * src[lane.base + i * ts];
            }
            out[lane.base + t * ts] = acc;
        }
    }
    let lanes = x.dims().lanes() as u64;
    let dense = (t_len * t_len) as u64 * lanes;
    counters.muls += dense;
    counters.adds += dense;
    x.with_data(out)
}

/// `S[t] = Θ(H[t] − V_th[t])`. The threshold subtraction adds `T` ADDs per lane.
pub fn psn_forward(x: &TemporalTensor<f64>, p: &PsnParams, counters: &mut OpCounters) -> Result<TemporalTensor<f64>> {
    let h = psn_charge(x, p, counters)?;
    let ts = h.time_stride();
    let mut out = vec![0.0; h.len()];
    for lane in h.lanes() {
        for t in 0..h.dims().t {
            let idx = lane.base + t * ts;
            out[idx] = heaviside(h.data()[idx] - p.thresholds[t]);
        }
    }
    counters.adds += (h.dims().t * h.dims().lanes()) as u64;
    h.with_data(out)
}

/// Reset-free LIF charge as a dense weight:
/// `W[t][i] = τ⁻¹(1 − τ⁻¹)^{t−i}` for `t ≥ i`, else 0.
pub fn lif_weight_init(t_len: usize, tau_m: f64) -> Result<Matrix> {
    if tau_m <= 1.0 {
        return Err(Error::InvalidConfig(format!("tau_m must exceed 1, got {tau_m}")));
    }
    let decay = 1.0 - 1.0 / tau_m;
    Ok(Matrix::from_fn(t_len, t_len, |t, i| if t >= i { decay.powi((t - i) as i32) / tau_m } else { 0.0 }))
}

/// Causal convolution with one kernel `w` (length k) for every channel, d = 1.
pub fn sliding_psn_charge(x: &TemporalTensor<f64>, w: &[f64]) -> Result<TemporalTensor<f64>> {
    let k = w.len();
    if k == 0 {
        return Err(Error::InvalidConfig("sliding kernel is empty".into()));
    }
    let t_len = x.dims().t;
    let ts = x.time_stride();
    let src = x.data();
    let mut out = vec![0.0; x.len()];
    for lane in x.lanes() {
        for t in 0..t_len {
            let mut acc = 0.0;
            for (i, &wi) in w.iter().enumerate() {
                let back = k - 1 - i;
                if back <= t {
                    acc += wi * src[lane.base + (t - back) * ts];
                }
            }
            out[lane.base + t * ts] = acc;
        }
    }
    x.with_data(out)
}

pub fn sliding_psn_forward(x: &TemporalTensor<f64>, w: &[f64], threshold: f64) -> Result<TemporalTensor<f64>> {
    let h = sliding_psn_charge(x, w)?;
    Ok(h.map(|v| heaviside(v - threshold)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engines::{ConvEngine, EngineKind};
    use crate::neuron::{charge, ChargeWeights, NeuronConfig, NeuronParams};
    use crate::tensor::{Dims, Layout};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(values: &[f64]) -> TemporalTensor<f64> {
        TemporalTensor::from_vec(Dims::new(values.len(), 1, 1), Layout::TimeFirst, values.to_vec()).unwrap()
    }

    #[test]
    fn identity_psn_thresholds_input() {
        let p = PsnParams::new(Matrix::from_fn(3, 3, |r, c| f64::from(r == c)), vec![0.0; 3]).unwrap();
        let s = psn_forward(&seq(&[-0.5, 0.0, 2.0]), &p, &mut OpCounters::default()).unwrap();
        assert_eq!(s.data(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn cumulative_sum_psn() {
        let p = PsnParams::new(Matrix::from_fn(3, 3, |r, c| f64::from(c <= r)), vec![0.5, 1.5, 2.5]).unwrap();
        let mut counters = OpCounters::default();
        let h = psn_charge(&seq(&[1.0, 1.0, 1.0]), &p, &mut counters).unwrap();
        assert_eq!(h.data(), &[1.0, 2.0, 3.0]);
        let s = psn_forward(&seq(&[1.0, 1.0, 1.0]), &p, &mut counters).unwrap();
        assert_eq!(s.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn psn_operation_counts() {
        let t = 5;
        let p = PsnParams::with_default_threshold(Matrix::zeros(t, t)).unwrap();
        let mut c = OpCounters::default();
        psn_forward(&seq(&vec![0.0; t]), &p, &mut c).unwrap();
        assert_eq!(c.muls, 25);
        assert_eq!(c.adds, 30);
    }

    #[test]
    fn zero_input_fires_on_negative_thresholds() {
        let p = PsnParams::new(Matrix::zeros(2, 2), vec![-1.0, 1.0]).unwrap();
        let s = psn_forward(&seq(&[0.0, 0.0]), &p, &mut OpCounters::default()).unwrap();
        assert_eq!(s.data(), &[1.0, 0.0]);
        assert!(psn_forward(&seq(&[0.0; 3]), &p, &mut OpCounters::default()).is_err());
    }

    #[test]
    fn lif_weights() {
        let w = lif_weight_init(3, 2.0).unwrap();
        assert_eq!(w.row(0), &[0.5, 0.0, 0.0]);
        assert_eq!(w.row(1), &[0.25, 0.5, 0.0]);
        assert_eq!(w.row(2), &[0.125, 0.25, 0.5]);
        let w = lif_weight_init(6, 3.0).unwrap();
        for t in 0..6 {
            assert!((w.get(t, t) - 1.0 / 3.0).abs() < 1e-15);
            for i in t + 1..6 {
                assert_eq!(w.get(t, i), 0.0);
            }
        }
        assert!(lif_weight_init(3, 0.5).is_err());
    }

    #[test]
    fn lif_psn_matches_step_by_step_recurrence() {
        let tau = 2.5;
        let t_len = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..t_len).map(|_| rng.gen_range(-1.0..2.0)).collect();
        let p = PsnParams::with_default_threshold(lif_weight_init(t_len, tau).unwrap()).unwrap();
        let h = psn_charge(&seq(&xs), &p, &mut OpCounters::default()).unwrap();
        let mut v = 0.0;
        for (t, &x) in xs.iter().enumerate() {
            v = (1.0 - 1.0 / tau) * v + x / tau;
            assert!((h.data()[t] - v).abs() <= 1e-12 * v.abs().max(1e-300), "t={t}");
        }
    }

    #[test]
    fn sliding_matches_shared_channel_wise_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let k = rng.gen_range(1..6);
            let c = rng.gen_range(1..5);
            let w: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let layout = if rng.gen() { Layout::TimeFirst } else { Layout::TimeLast };
            let x = TemporalTensor::from_fn(Dims::new(rng.gen_range(1..12), 2, c), layout, |_, _, _, _| {
                rng.gen_range(-2.0..2.0)
            })
            .unwrap();
            let cfg = NeuronConfig::new(c, k, 1).unwrap().shared();
            let p = NeuronParams::new(Matrix::from_vec(1, k, w.clone()).unwrap()).unwrap();
            let mut engine = ConvEngine::new(EngineKind::DirectLoop);
            let h = charge(&x, ChargeWeights::Float(&p), &cfg, &mut engine, &mut OpCounters::default()).unwrap();
            let reference = sliding_psn_charge(&x, &w).unwrap();
            let bits = |t: &TemporalTensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&h), bits(&reference));
        }
    }

    #[test]
    fn full_order_sliding_reproduces_psn_last_row() {
        let t_len = 7;
        let psn_w = lif_weight_init(t_len, 2.0).unwrap();
        // kernel tap i multiplies X[t − (k−1−i)], i.e. the last row read left to right
        let kernel = psn_w.row(t_len - 1).to_vec();
        let xs: Vec<f64> = (0..t_len).map(|t| (t as f64 * 0.7).sin()).collect();
        let p = PsnParams::with_default_threshold(psn_w).unwrap();
        let full = psn_charge(&seq(&xs), &p, &mut OpCounters::default()).unwrap();
        let sliding = sliding_psn_charge(&seq(&xs), &kernel).unwrap();
        assert!((full.data()[t_len - 1] - sliding.data()[t_len - 1]).abs() < 1e-15);
    }

    #[test]
    fn order_one_unit_kernel_passes_binary_input() {
        let xs = [1.0, 0.0, 0.0, 1.0, 1.0];
        let s = sliding_psn_forward(&seq(&xs), &[1.0], 0.5).unwrap();
        assert_eq!(s.data(), &xs);
    }

    #[test]
    fn psn_is_not_causal_but_sliding_is() {
        let t_len = 6;
        let p = PsnParams::with_default_threshold(Matrix::from_fn(t_len, t_len, |_, _| 0.3)).unwrap();
        let base = seq(&[0.0; 6]);
        let mut bumped = vec![0.0; 6];
        bumped[5] = 1.0;
        let bumped = seq(&bumped);
        let h0 = psn_charge(&base, &p, &mut OpCounters::default()).unwrap();
        let h1 = psn_charge(&bumped, &p, &mut OpCounters::default()).unwrap();
        assert_ne!(h0.data()[0], h1.data()[0]);
        let s0 = sliding_psn_charge(&base, &[0.3, 0.3, 0.3]).unwrap();
        let s1 = sliding_psn_charge(&bumped, &[0.3, 0.3, 0.3]).unwrap();
        assert_eq!(&s0.data()[..5], &s1.data()[..5]);
    }
}
