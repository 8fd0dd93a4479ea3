//! Empirical engine and layout selection.
//!
//! Every layer's candidate implementations are timed (forward plus backward
//! with a random upstream gradient) under both layouts; each layer keeps its
//! fastest candidate and the layout with the smallest summed time wins.

use std::cell::Cell;
use std::fmt;
use std::rc::Rc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::engines::{ConvEngine, EngineKind, BLOCK_SIZES};
use crate::error::{Error, Result};
use crate::network::{ForwardOptions, Layer, LayerCache, Network};
use crate::tensor::{convert_layout, Layout, TemporalTensor};

pub const DEFAULT_REPEATS: usize = 5;

/// Seconds on some monotonic time base.
pub trait Clock {
    fn now(&self) -> f64;
}

/// Production clock.
#[derive(Clone, Debug)]
pub struct MonotonicClock {
    origin: Instant,
}

impl Default for MonotonicClock {
    fn default() -> Self {
        MonotonicClock { origin: Instant::now() }
    }
}

impl Clock for MonotonicClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }
}

/// Clock that moves only when told to; share it via `Rc` with the code
/// under test.
#[derive(Debug, Default)]
pub struct ManualClock {
    ticks: Cell<f64>,
}

impl ManualClock {
    pub fn new() -> Rc<Self> {
        Rc::new(ManualClock::default())
    }

    pub fn advance(&self, ticks: f64) {
        self.ticks.set(self.ticks.get() + ticks);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> f64 {
        self.ticks.get()
    }
}

impl<C: Clock + ?Sized> Clock for Rc<C> {
    fn now(&self) -> f64 {
        (**self).now()
    }
}

impl<C: Clock + ?Sized> Clock for &C {
    fn now(&self) -> f64 {
        (**self).now()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub layer_index: usize,
    pub engine: EngineKind,
    pub layout: Layout,
    pub block_size: Option<usize>,
}

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.block_size {
            Some(b) => write!(f, "{}/{}", self.engine, b),
            None => write!(f, "{}", self.engine),
        }
    }
}

/// A layer stack whose layers can run any of their candidates in isolation.
pub trait BenchTarget {
    fn num_layers(&self) -> usize;
    fn candidates(&self, layer: usize, layout: Layout) -> Vec<Candidate>;
    fn forward(&mut self, candidate: &Candidate, x: &TemporalTensor<f64>) -> Result<TemporalTensor<f64>>;
    /// Backward of the most recent `forward`.
    fn backward(&mut self, candidate: &Candidate, dy: &TemporalTensor<f64>) -> Result<()>;
    /// Installs the chosen configuration.
    fn apply(&mut self, layout: Layout, choices: &[Candidate]) -> Result<()>;
}

/// Mean of the last `m` of `2m + 1` timed forward/backward executions,
/// together with the output of the final forward. The upstream gradient is
/// one standard-normal draw per call with a fixed seed.
pub fn benchmark_candidate<T: BenchTarget + ?Sized>(
    target: &mut T,
    candidate: &Candidate,
    x: &TemporalTensor<f64>,
    m: usize,
    clock: &dyn Clock,
) -> Result<(f64, TemporalTensor<f64>)> {
    if m == 0 {
        return Err(Error::InvalidConfig("repeat count m must be at least 1".into()));
    }
    if !target.candidates(candidate.layer_index, candidate.layout).contains(candidate) {
        return Err(Error::CandidateInvalid {
            layer: candidate.layer_index,
            reason: format!("{candidate} is not offered under {}", candidate.layout),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ candidate.layer_index as u64);
    let mut total = 0.0;
    let mut last = None;
    let mut z: Option<TemporalTensor<f64>> = None;
    for run in 0..2 * m + 1 {
        let t0 = clock.now();
        let y = target.forward(candidate, x)?;
        let t1 = clock.now();
        let z = z.get_or_insert_with(|| y.map(|_| StandardNormal.sample(&mut rng)));
        let t2 = clock.now();
        target.backward(candidate, z)?;
        let t3 = clock.now();
        if run > m {
            total += (t1 - t0) + (t3 - t2);
        }
        last = Some(y);
    }
    Ok((total / m as f64, last.expect("at least one run")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub candidate: Candidate,
    pub mean_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    /// `t_Ω` for each layout, in [`Layout::ALL`] order.
    pub layout_totals: Vec<(Layout, f64)>,
    pub chosen_layout: Layout,
    /// One entry per layer.
    pub chosen: Vec<Candidate>,
}

impl BenchReport {
    pub fn total(&self, layout: Layout) -> f64 {
        self.layout_totals.iter().find(|(l, _)| *l == layout).map_or(f64::INFINITY, |(_, t)| *t)
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<6} {:<11} {:<12} {:>14}", "layer", "layout", "engine", "mean_seconds")?;
        for r in &self.records {
            let mark = if self.chosen.get(r.candidate.layer_index) == Some(&r.candidate) { " *" } else { "" };
            writeln!(
                f,
                "{:<6} {:<11} {:<12} {:>14.9}{mark}",
                r.candidate.layer_index,
                r.candidate.layout.name(),
                r.candidate.to_string(),
                r.mean_seconds
            )?;
        }
        for (layout, t) in &self.layout_totals {
            writeln!(f, "total {:<11} {:.9}", layout.name(), t)?;
        }
        write!(f, "chosen layout {}", self.chosen_layout.name())
    }
}

/// Times every candidate of every layer under both layouts, picks the
/// fastest configuration and applies it to `target`.
///
/// `x` may be in either layout; it is converted outside the timed region.
/// Ties go to the lower candidate index and to time-first.
pub fn autoselect<T: BenchTarget + ?Sized>(
    target: &mut T,
    x: &TemporalTensor<f64>,
    m: usize,
    clock: &dyn Clock,
) -> Result<BenchReport> {
    let layers = target.num_layers();
    if layers == 0 {
        return Err(Error::EmptyNetwork);
    }
    let mut records = Vec::new();
    let mut layout_totals = Vec::new();
    let mut per_layout = Vec::new();
    for layout in Layout::ALL {
        let (mut cur, _) = convert_layout(x, layout);
        let mut choices = Vec::with_capacity(layers);
        let mut total = 0.0;
        for l in 0..layers {
            let candidates = target.candidates(l, layout);
            if candidates.is_empty() {
                return Err(Error::CandidateInvalid { layer: l, reason: format!("no candidate under {layout}") });
            }
            let mut best: Option<(f64, Candidate, TemporalTensor<f64>)> = None;
            for cand in candidates {
                let (t, y) = benchmark_candidate(target, &cand, &cur, m, clock)?;
                records.push(BenchRecord { candidate: cand.clone(), mean_seconds: t });
                if best.as_ref().is_none_or(|(bt, _, _)| t < *bt) {
                    best = Some((t, cand, y));
                }
            }
            let (t, cand, y) = best.expect("non-empty candidate list");
            total += t;
            choices.push(cand);
            cur = y;
        }
        layout_totals.push((layout, total));
        per_layout.push(choices);
    }
    let mut pick = 0;
    for (i, (_, t)) in layout_totals.iter().enumerate() {
        if *t < layout_totals[pick].1 {
            pick = i;
        }
    }
    let chosen_layout = layout_totals[pick].0;
    let chosen = per_layout.swap_remove(pick);
    target.apply(chosen_layout, &chosen)?;
    Ok(BenchReport { records, layout_totals, chosen_layout, chosen })
}

/// Which engines a network benchmark offers for spiking layers.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub engines: Vec<EngineKind>,
    pub block_sizes: Vec<usize>,
    /// Thread count pinned for every blocked candidate.
    pub threads: usize,
}

impl Default for CandidateSet {
    fn default() -> Self {
        CandidateSet {
            engines: vec![EngineKind::DirectLoop, EngineKind::MatMul, EngineKind::BlockedDirect, EngineKind::ShiftInt],
            block_sizes: BLOCK_SIZES.to_vec(),
            threads: 1,
        }
    }
}

/// [`BenchTarget`] view of a [`Network`]. Linear layers have a single
/// candidate; spiking layers offer the engines of the candidate set, with
/// the shift engine only for quantized layers.
pub struct NetworkBench<'a> {
    net: &'a mut Network,
    set: CandidateSet,
    cache: Option<LayerCache>,
}

impl<'a> NetworkBench<'a> {
    pub fn new(net: &'a mut Network, set: CandidateSet) -> Self {
        NetworkBench { net, set, cache: None }
    }

    fn install(&mut self, c: &Candidate) {
        if let Layer::Spiking(s) = &mut self.net.layers_mut()[c.layer_index] {
            let mut engine = ConvEngine::new(c.engine).with_threads(self.set.threads);
            if let Some(b) = c.block_size {
                engine = engine.with_block(b);
            }
            s.engine = engine;
        }
    }
}

fn bench_options() -> ForwardOptions {
    ForwardOptions { update_running: false, ..ForwardOptions::default() }
}

impl BenchTarget for NetworkBench<'_> {
    fn num_layers(&self) -> usize {
        self.net.layers().len()
    }

    fn candidates(&self, layer: usize, layout: Layout) -> Vec<Candidate> {
        let base = Candidate { layer_index: layer, engine: EngineKind::DirectLoop, layout, block_size: None };
        match self.net.layers().get(layer) {
            None => Vec::new(),
            Some(Layer::Linear(_)) => vec![base],
            Some(Layer::Spiking(s)) => {
                let mut out = Vec::new();
                for &engine in &self.set.engines {
                    match engine {
                        EngineKind::BlockedDirect => out.extend(
                            self.set.block_sizes.iter().map(|&b| Candidate { engine, block_size: Some(b), ..base.clone() }),
                        ),
                        EngineKind::ShiftInt if !s.cfg.quantized => {}
                        _ => out.push(Candidate { engine, ..base.clone() }),
                    }
                }
                out
            }
        }
    }

    fn forward(&mut self, candidate: &Candidate, x: &TemporalTensor<f64>) -> Result<TemporalTensor<f64>> {
        self.install(candidate);
        let (y, cache) = self.net.forward_layer(candidate.layer_index, x, bench_options())?;
        self.cache = Some(cache);
        Ok(y)
    }

    fn backward(&mut self, candidate: &Candidate, dy: &TemporalTensor<f64>) -> Result<()> {
        let cache = self.cache.take().ok_or_else(|| Error::InvalidConfig("backward before forward".into()))?;
        let mut instability = 0;
        self.net.backward_layer(candidate.layer_index, &cache, dy, &mut instability)?;
        Ok(())
    }

    fn apply(&mut self, layout: Layout, choices: &[Candidate]) -> Result<()> {
        if choices.len() != self.num_layers() {
            return Err(Error::InvalidConfig("one choice per layer required".into()));
        }
        for c in choices {
            self.install(c);
        }
        self.net.set_layout(layout);
        Ok(())
    }
}

/// Fastest of `rounds` full training steps (forward and backward over the
/// whole network, running statistics untouched) with the network's current
/// configuration.
pub fn time_training_step(net: &mut Network, x: &TemporalTensor<f64>, rounds: usize, clock: &dyn Clock) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut best = f64::INFINITY;
    for _ in 0..rounds.max(1) {
        let t0 = clock.now();
        let (y, caches) = net.forward_train(x, bench_options())?;
        let z = y.map(|_| StandardNormal.sample(&mut rng));
        net.backward(&caches, &z)?;
        best = best.min(clock.now() - t0);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    /// Layers whose candidates take a fixed number of ticks per execution.
    struct Table {
        clock: Rc<ManualClock>,
        /// `ticks[layout][layer][candidate]`.
        ticks: Vec<Vec<Vec<f64>>>,
        applied: Option<(Layout, Vec<Candidate>)>,
    }

    impl Table {
        fn layout_index(layout: Layout) -> usize {
            Layout::ALL.iter().position(|&l| l == layout).unwrap()
        }
    }

    impl BenchTarget for Table {
        fn num_layers(&self) -> usize {
            self.ticks[0].len()
        }
        fn candidates(&self, layer: usize, layout: Layout) -> Vec<Candidate> {
            let n = self.ticks[Self::layout_index(layout)][layer].len();
            (0..n)
                .map(|i| Candidate { layer_index: layer, engine: EngineKind::BlockedDirect, layout, block_size: Some(i) })
                .collect()
        }
        fn forward(&mut self, c: &Candidate, x: &TemporalTensor<f64>) -> Result<TemporalTensor<f64>> {
            let t = self.ticks[Self::layout_index(c.layout)][c.layer_index][c.block_size.unwrap()];
            self.clock.advance(t / 2.0);
            Ok(x.clone())
        }
        fn backward(&mut self, c: &Candidate, _: &TemporalTensor<f64>) -> Result<()> {
            let t = self.ticks[Self::layout_index(c.layout)][c.layer_index][c.block_size.unwrap()];
            self.clock.advance(t / 2.0);
            Ok(())
        }
        fn apply(&mut self, layout: Layout, choices: &[Candidate]) -> Result<()> {
            self.applied = Some((layout, choices.to_vec()));
            Ok(())
        }
    }

    fn input() -> TemporalTensor<f64> {
        TemporalTensor::zeros(Dims::new(2, 1, 1), Layout::TimeFirst).unwrap()
    }

    #[test]
    fn faster_candidate_wins() {
        let clock = ManualClock::new();
        let mut t = Table { clock: clock.clone(), ticks: vec![vec![vec![2.0, 3.0]], vec![vec![9.0]]], applied: None };
        let report = autoselect(&mut t, &input(), 1, &clock).unwrap();
        assert_eq!(report.chosen_layout, Layout::TimeFirst);
        assert_eq!(report.chosen[0].block_size, Some(0));
        assert_eq!(report.records[0].mean_seconds, 2.0);
        assert!(t.applied.is_some());
    }

    #[test]
    fn layout_trace() {
        let clock = ManualClock::new();
        let mut t = Table { clock: clock.clone(), ticks: vec![vec![vec![5.0, 3.0]], vec![vec![4.0, 4.0]]], applied: None };
        let report = autoselect(&mut t, &input(), DEFAULT_REPEATS, &clock).unwrap();
        assert_eq!(report.chosen_layout, Layout::TimeFirst);
        assert_eq!(report.chosen[0].block_size, Some(1));
        assert_eq!(report.total(Layout::TimeFirst), 3.0);
        assert_eq!(report.total(Layout::TimeLast), 4.0);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let clock = ManualClock::new();
        let mut t = Table { clock: clock.clone(), ticks: vec![vec![vec![2.0, 2.0]], vec![vec![2.0]]], applied: None };
        let report = autoselect(&mut t, &input(), 2, &clock).unwrap();
        assert_eq!(report.chosen_layout, Layout::TimeFirst);
        assert_eq!(report.chosen[0].block_size, Some(0));
    }

    #[test]
    fn only_last_m_runs_count() {
        struct Slowing(Rc<ManualClock>, f64);
        impl BenchTarget for Slowing {
            fn num_layers(&self) -> usize {
                1
            }
            fn candidates(&self, layer: usize, layout: Layout) -> Vec<Candidate> {
                vec![Candidate { layer_index: layer, engine: EngineKind::DirectLoop, layout, block_size: None }]
            }
            fn forward(&mut self, _: &Candidate, x: &TemporalTensor<f64>) -> Result<TemporalTensor<f64>> {
                self.1 += 1.0;
                self.0.advance(self.1);
                Ok(x.clone())
            }
            fn backward(&mut self, _: &Candidate, _: &TemporalTensor<f64>) -> Result<()> {
                Ok(())
            }
            fn apply(&mut self, _: Layout, _: &[Candidate]) -> Result<()> {
                Ok(())
            }
        }
        let clock = ManualClock::new();
        let mut s = Slowing(clock.clone(), 0.0);
        let c = s.candidates(0, Layout::TimeFirst).remove(0);
        let (t, _) = benchmark_candidate(&mut s, &c, &input(), 1, &clock).unwrap();
        assert_eq!(t, 3.0);
        let (t, _) = benchmark_candidate(&mut s, &c, &input(), 2, &clock).unwrap();
        // runs 4..=8 of the counter, the last two are 7 and 8
        assert_eq!(t, 7.5);
        assert!(benchmark_candidate(&mut s, &c, &input(), 0, &clock).is_err());
    }

    #[test]
    fn invalid_candidate_and_empty_target() {
        let clock = ManualClock::new();
        let mut t = Table { clock: clock.clone(), ticks: vec![vec![vec![1.0]], vec![vec![1.0]]], applied: None };
        let bad = Candidate { layer_index: 0, engine: EngineKind::BlockedDirect, layout: Layout::TimeFirst, block_size: Some(7) };
        assert!(matches!(benchmark_candidate(&mut t, &bad, &input(), 1, &clock), Err(Error::CandidateInvalid { .. })));
        let mut empty = Table { clock: clock.clone(), ticks: vec![vec![], vec![]], applied: None };
        assert!(matches!(autoselect(&mut empty, &input(), 1, &clock), Err(Error::EmptyNetwork)));
    }
}
