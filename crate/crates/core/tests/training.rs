use ssnn_core::autoselect::{autoselect, time_training_step, CandidateSet, MonotonicClock, NetworkBench};
use ssnn_core::engines::{conv_backward_weight, conv_forward_direct, OpCounters};
use ssnn_core::network::{ForwardOptions, SpikeMode};
use ssnn_core::quant::QuantGradMode;
use ssnn_core::tensor::{Dims, Layout, Matrix, TemporalTensor};
use ssnn_core::train::{
    cross_entropy, finite_diff_check, relative_error, train, ModelConfig, Optimizer, OptimizerKind, ToyTask,
    TrainConfig,
};
use ssnn_core::Error;

fn small_task(lag: usize) -> ToyTask {
    ToyTask { train_size: 128, test_size: 64, ..ToyTask::delayed_xor(lag, 12) }
}

#[test]
fn current_step_task_is_learned() {
    let mc = ModelConfig { channels: 8, ..ModelConfig::default() };
    let mut net = mc.build_seeded(1).unwrap();
    let cfg = TrainConfig { epochs: 15, ..TrainConfig::default() };
    let out = train(&mut net, &small_task(0), &cfg, |_| {}).unwrap();
    assert!(out.history.last().unwrap().test_acc >= 0.99, "{:?}", out.history.last());
}

#[test]
fn training_is_bit_reproducible() {
    let mc = ModelConfig { channels: 4, quantized: true, ..ModelConfig::default() };
    let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
    let run = || {
        let mut net = mc.build_seeded(3).unwrap();
        let h = train(&mut net, &small_task(3), &cfg, |_| {}).unwrap().history;
        (h, net.params_flat())
    };
    let (h1, p1) = run();
    let (h2, p2) = run();
    assert_eq!(h1, h2);
    assert_eq!(p1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), p2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn small_sgd_step_lowers_smoothed_loss() {
    let mut net = ModelConfig { channels: 4, ..ModelConfig::default() }.build_seeded(4).unwrap();
    let data = small_task(2).datasets().unwrap().0;
    let opts = ForwardOptions { spike: SpikeMode::Smooth, update_running: false, ..ForwardOptions::default() };
    let (logits, caches) = net.forward_train(&data.inputs, opts).unwrap();
    let before = cross_entropy(&logits, &data.labels).unwrap();
    let grads = net.backward(&caches, &before.grad).unwrap().flat();
    let mut params = net.params_flat();
    Optimizer::new(OptimizerKind::Sgd, 1e-3, params.len()).step(&mut params, &grads);
    net.set_params_flat(&params).unwrap();
    let after = cross_entropy(&net.forward_train(&data.inputs, opts).unwrap().0, &data.labels).unwrap();
    assert!(after.loss < before.loss);
}

#[test]
fn round_ste_never_corrupts_silently() {
    let mc = ModelConfig { channels: 4, quantized: true, grad_mode: QuantGradMode::RoundSte, ..ModelConfig::default() };
    let mut net = mc.build_seeded(5).unwrap();
    // start with tiny weights so quantized kernels sit near zero
    let tiny: Vec<f64> = net.params_flat().iter().map(|v| v * 1e-3).collect();
    net.set_params_flat(&tiny).unwrap();
    let cfg = TrainConfig { epochs: 3, learning_rate: 0.05, ..TrainConfig::default() };
    match train(&mut net, &small_task(2), &cfg, |_| {}) {
        Ok(out) => {
            assert!(out.history.iter().all(|m| m.loss.is_finite()));
            assert!(net.params_flat().iter().all(|v| v.is_finite()));
        }
        Err(Error::NonFinite(msg)) => assert!(msg.contains("epoch")),
        Err(other) => panic!("unexpected error {other}"),
    }
}

#[test]
fn whole_ste_gradients_are_finite() {
    let mc = ModelConfig { channels: 4, quantized: true, ..ModelConfig::default() };
    let mut net = mc.build_seeded(6).unwrap();
    let zeros = vec![0.0; net.params_flat().len()];
    net.set_params_flat(&zeros).unwrap();
    let data = small_task(2).datasets().unwrap().0;
    let (logits, caches) = net.forward_train(&data.inputs, ForwardOptions::default()).unwrap();
    let out = cross_entropy(&logits, &data.labels).unwrap();
    let g = net.backward(&caches, &out.grad).unwrap();
    assert!(g.flat().iter().all(|v| v.is_finite()));
}

#[test]
fn quantized_model_mismatches_are_flagged_not_failed() {
    let mc = ModelConfig { channels: 3, layers: 1, quantized: true, grad_mode: QuantGradMode::RoundSte, ..ModelConfig::default() };
    let net = mc.build_seeded(7).unwrap();
    let data = ToyTask { train_size: 4, test_size: 1, ..ToyTask::delayed_xor(1, 6) }.datasets().unwrap().0;
    // a step wide enough to push some folded weights across a power-of-two boundary
    let report = finite_diff_check(&net, &data, 0.05, 1e-4).unwrap();
    assert!(!report.flagged.is_empty());
    assert!(report.non_finite.is_empty());
}

#[test]
fn linear_conv_model_gradient_is_exact() {
    // L(W) = Σ c ⊙ conv(x, W): the analytic weight gradient is the exact adjoint
    let x = TemporalTensor::from_fn(Dims::new(9, 2, 3), Layout::TimeLast, |t, n, c, _| ((t * 3 + n * 5 + c) as f64).cos())
        .unwrap();
    let w = Matrix::from_fn(3, 3, |r, c| 0.1 * (r as f64 - c as f64) + 0.05);
    let coeff = x.map(|v| v.sin() + 0.5);
    let loss = |w: &Matrix| -> f64 {
        let h = conv_forward_direct(&x, w, None, 2, &mut OpCounters::default()).unwrap();
        h.data().iter().zip(coeff.data()).map(|(a, b)| a * b).sum()
    };
    let g = conv_backward_weight(&x, &coeff, 3, 2).unwrap();
    let h = 1e-5;
    for r in 0..3 {
        for c in 0..3 {
            let mut p = w.clone();
            p.set(r, c, w.get(r, c) + h);
            let mut m = w.clone();
            m.set(r, c, w.get(r, c) - h);
            let numeric = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!(relative_error(g.get(r, c), numeric) <= 1e-8);
        }
    }
}

#[test]
fn autoselect_overhead_is_small_against_a_desk_scale_run() {
    // 10 epochs over 8192 samples in batches of 32; the step time is measured,
    // the run length is extrapolated from it
    let mc = ModelConfig::default();
    let mut net = mc.build_seeded(0).unwrap();
    let task = ToyTask { train_size: 32, test_size: 1, ..ToyTask::delayed_xor(6, 20) };
    let x = task.datasets().unwrap().0.inputs;
    let clock = MonotonicClock::default();
    let t0 = std::time::Instant::now();
    autoselect(&mut NetworkBench::new(&mut net, CandidateSet::default()), &x, 5, &clock).unwrap();
    let select = t0.elapsed().as_secs_f64();
    let step = time_training_step(&mut net, &x, 5, &clock).unwrap();
    let run = step * (8192.0 / 32.0) * 10.0;
    assert!(select < 0.05 * run, "autoselect {select}s vs run {run}s");
}
