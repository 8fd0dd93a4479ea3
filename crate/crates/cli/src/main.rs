//! `ssnn`: quantize, run, train, benchmark and cost spiking networks built
//! from multiplication-free channel-wise neurons.

mod config;

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssnn_core::analysis::{
    network_energy_report, neuron_energy, sequential_cifar100_counts, EnergyModel, NetworkOps, NeuronKind,
};
use ssnn_core::autoselect::{
    autoselect, benchmark_candidate, time_training_step, BenchTarget, CandidateSet, MonotonicClock, NetworkBench,
};
use ssnn_core::engines::{in_range_taps, EngineKind, OpCounters};
use ssnn_core::io::{load_model, read_activations, save_model, write_activations, Dtype};
use ssnn_core::network::{InferenceModel, InferenceTrace, Layer, ModelLayer, Network, SpikingLayer};
use ssnn_core::neuron::{receptive_field, NeuronConfig, NeuronParams};
use ssnn_core::tensor::{Dims, Layout, TemporalTensor};
use ssnn_core::train::{train, DilationSchedule, ModelConfig};

use config::Config;

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const NUMERIC: u8 = 3;

    pub fn usage(message: String) -> Self {
        CliError { code: Self::USAGE, message }
    }

    fn data(message: String) -> Self {
        CliError { code: Self::DATA, message }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ssnn_core::Error> for CliError {
    fn from(e: ssnn_core::Error) -> Self {
        let code = match e {
            ssnn_core::Error::NonFinite(_) => Self::NUMERIC,
            _ => Self::DATA,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "ssnn", version, about = "Multiplication-free channel-wise spiking neuron toolkit")]
struct Cli {
    /// Threads for the blocked engine.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    dump_config: bool,
}

impl ConfigArgs {
    fn load(&self) -> CliResult<Config> {
        let mut cfg = Config::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        for pair in &self.overrides {
            cfg.apply_override(pair)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fold thresholds into float neuron layers and quantize them to powers of two.
    Quantize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run a model on an activation file.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Write the readout potentials here.
        #[arg(long)]
        output: Option<PathBuf>,
        /// direct, matmul, blocked or shift; defaults to shift for quantized models.
        #[arg(long)]
        engine: Option<String>,
        /// Second model to compare spikes and predictions against.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Train a model on a synthetic task.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Save the trained model (quantized if `quantized=true`).
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Select engines and layout empirically and sweep T.
    Bench {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Skip the per-T timing sweep.
        #[arg(long)]
        no_sweep: bool,
    },
    /// Energy estimate from measured or supplied operation counts.
    Energy {
        /// Built-in operation counts: `seq-cifar100`.
        #[arg(long, conflicts_with_all = ["model", "sweep"])]
        preset: Option<String>,
        /// Model whose layer shapes give the operation counts.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Measure counts by running the model on this activation file.
        #[arg(long, conflicts_with = "rates")]
        input: Option<PathBuf>,
        /// Firing rates per synaptic layer, `layer=rate` lines.
        #[arg(long, requires = "steps")]
        rates: Option<PathBuf>,
        /// Time steps per sample when counting from rates.
        #[arg(long)]
        steps: Option<u64>,
        /// Per-neuron energy of both neuron kinds over T ∈ {8,16,32,64,128}.
        #[arg(long)]
        sweep: bool,
        /// Kernel order for the sweep; defaults to k = T.
        #[arg(long)]
        order: Option<u64>,
    },
    /// Receptive field per layer.
    Rf {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))
}

fn read_model(path: &Path) -> CliResult<InferenceModel> {
    Ok(load_model(&mut BufReader::new(open(path)?))?)
}

fn write_model(model: &InferenceModel, path: &Path) -> CliResult {
    let mut w = BufWriter::new(File::create(path)?);
    save_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_quantize(input: &Path, output: &Path, out: &mut impl Write) -> CliResult {
    let model = read_model(input)?;
    let (q, errors) = model.quantize()?;
    writeln!(out, "layer  max_rel_error")?;
    let neuron_layers = q.layers.iter().enumerate().filter(|(_, l)| l.is_neuron());
    for ((index, _), err) in neuron_layers.zip(&errors) {
        writeln!(out, "{index:<6} {err:.6}")?;
    }
    write_model(&q, output)?;
    writeln!(out, "wrote {} neuron layer(s) quantized", errors.len())?;
    Ok(())
}

fn layer_kind(layer: &ModelLayer) -> &'static str {
    match layer {
        ModelLayer::Linear(_) => "synaptic",
        ModelLayer::NeuronFloat { .. } => "neuron",
        ModelLayer::NeuronQuantized { .. } => "neuron-q",
    }
}

fn print_activity(model: &InferenceModel, trace: &InferenceTrace, out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "{:<6} {:<9} {:>12} {:>12} {:>12} {:>11}", "layer", "kind", "muls", "adds", "shifts", "input_rate")?;
    for (i, (layer, a)) in model.layers.iter().zip(&trace.activity).enumerate() {
        let rate = if a.neuron { "-".to_string() } else { format!("{:.4}", a.input_firing_rate) };
        writeln!(out, "{i:<6} {:<9} {:>12} {:>12} {:>12} {rate:>11}", layer_kind(layer), a.ops.muls, a.ops.adds, a.ops.shifts)?;
    }
    Ok(())
}

fn cmd_infer(
    model_path: &Path,
    input: &Path,
    output: Option<&Path>,
    engine: Option<&str>,
    reference: Option<&Path>,
    out: &mut impl Write,
) -> CliResult {
    let model = read_model(model_path)?;
    let x = read_activations(&mut BufReader::new(open(input)?))?;
    let engine = match engine {
        Some(name) => EngineKind::parse(name).map_err(|e| CliError::usage(e.to_string()))?,
        None if model.is_quantized() => EngineKind::ShiftInt,
        None => EngineKind::DirectLoop,
    };
    let trace = model.forward(&x, engine)?;
    let d = x.dims();
    writeln!(
        out,
        "model: {} layers ({})",
        model.layers.len(),
        if model.is_quantized() { "quantized" } else { "float" }
    )?;
    writeln!(out, "engine: {engine}")?;
    writeln!(out, "input: T={} N={} C={} {}", d.t, d.n, d.c, x.layout())?;
    print_activity(&model, &trace, out)?;
    writeln!(out, "neuron-layer muls: {}", trace.neuron_ops().muls)?;
    for (i, s) in trace.spikes.iter().enumerate() {
        let rate = s.data().iter().sum::<f64>() / s.len() as f64;
        writeln!(out, "spike rate neuron {i}: {rate:.6}")?;
    }
    let preds = trace.predictions();
    for n in 0..d.n {
        let row: String = (0..d.t).map(|t| char::from_digit(preds[t * d.n + n] as u32 % 36, 36).unwrap_or('?')).collect();
        writeln!(out, "sample {n}: {row}")?;
    }
    if let Some(path) = reference {
        let other = read_model(path)?;
        let other_engine = if other.is_quantized() { EngineKind::ShiftInt } else { EngineKind::DirectLoop };
        let ref_trace = other.forward(&x, other_engine)?;
        if ref_trace.spikes.len() != trace.spikes.len() {
            return Err(CliError::data("reference model has a different number of neuron layers".into()));
        }
        for (i, (a, b)) in trace.spikes.iter().zip(&ref_trace.spikes).enumerate() {
            if a.len() != b.len() {
                return Err(CliError::data(format!("neuron layer {i} differs in shape from the reference")));
            }
            let same = a.data().iter().zip(b.data()).filter(|(p, q)| p == q).count();
            writeln!(out, "spike agreement neuron {i}: {:.6}", same as f64 / a.len() as f64)?;
        }
        let other_preds = ref_trace.predictions();
        let same = preds.iter().zip(&other_preds).filter(|(p, q)| p == q).count();
        writeln!(out, "prediction agreement: {:.6}", same as f64 / preds.len() as f64)?;
    }
    if let Some(path) = output {
        let mut w = BufWriter::new(File::create(path)?);
        write_activations(&trace.output, Dtype::F64, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_train(cfg: &Config, save: Option<&Path>, out: &mut impl Write) -> CliResult {
    let mut net = cfg.model()?.build_seeded(cfg.seed)?;
    let mut io_err = None;
    let outcome = train(&mut net, &cfg.task(), &cfg.training(), |m| {
        if let Err(e) = writeln!(out, "{m}") {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    if outcome.instability > 0 {
        writeln!(out, "round-ste zero-weight events: {}", outcome.instability)?;
    }
    if let Some(path) = save {
        write_model(&net.export()?, path)?;
        writeln!(out, "saved {}", path.display())?;
    }
    Ok(())
}

fn bench_network(cfg: &Config) -> CliResult<(Network, TemporalTensor<f64>)> {
    let net = cfg.model()?.build_seeded(cfg.seed)?;
    let (train_set, _) = cfg.task().datasets()?;
    let n = cfg.batch_size.min(train_set.samples());
    let batch = train_set.subset(&(0..n).collect::<Vec<_>>())?;
    Ok((net, batch.inputs))
}

fn cmd_bench(cfg: &Config, threads: usize, sweep: bool, out: &mut impl Write) -> CliResult {
    let clock = MonotonicClock::default();
    let set = CandidateSet { engines: cfg.engines.clone(), block_sizes: cfg.block_sizes.clone(), threads };
    let (mut net, x) = bench_network(cfg)?;
    let started = Instant::now();
    let report = {
        let mut bench = NetworkBench::new(&mut net, set.clone());
        autoselect(&mut bench, &x, cfg.repeats, &clock)?
    };
    let select_seconds = started.elapsed().as_secs_f64();
    writeln!(out, "{report}")?;
    let step = time_training_step(&mut net, &x, 5, &clock)?;
    let batches = cfg.train_size.div_ceil(cfg.batch_size.max(1));
    let ten_epochs = step * batches as f64 * 10.0;
    writeln!(
        out,
        "autoselect {:.3}s, estimated 10-epoch training {:.3}s, overhead {:.2}%",
        select_seconds,
        ten_epochs,
        100.0 * select_seconds / ten_epochs
    )?;
    if !sweep {
        return Ok(());
    }
    writeln!(out, "sweep: one neuron layer, C={} N={} k=min({}, T), d=1", cfg.channels, cfg.batch_size, cfg.order)?;
    let engines: Vec<EngineKind> = set.engines.iter().copied().filter(|&e| e != EngineKind::ShiftInt || cfg.quantized).collect();
    write!(out, "{:>6}", "T")?;
    for e in &engines {
        write!(out, " {:>12}", e.name())?;
    }
    writeln!(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for &t in &cfg.sweep_steps {
        let k = cfg.order.min(t);
        let ncfg = NeuronConfig::new(cfg.channels, k, 1)?.quantized(cfg.quantized);
        let params = NeuronParams::lif_init(&ncfg, 2.0)?;
        let layer = Layer::Spiking(SpikingLayer::new(ncfg, params)?);
        let mut net = Network::new(vec![layer], cfg.model()?.surrogate)?;
        let dims = Dims::new(t, cfg.batch_size.max(1), cfg.channels);
        let x = TemporalTensor::from_fn(dims, Layout::TimeFirst, |_, _, _, _| f64::from(u8::from(rng.gen_bool(0.2))))?;
        let mut bench = NetworkBench::new(&mut net, set.clone());
        let candidates = bench.candidates(0, Layout::TimeFirst);
        write!(out, "{t:>6}")?;
        for &engine in &engines {
            // one representative block size per engine
            let pick = candidates.iter().filter(|c| c.engine == engine).min_by_key(|c| c.block_size.map_or(0, |b| b.abs_diff(16)));
            match pick {
                Some(c) => {
                    let (secs, _) = benchmark_candidate(&mut bench, c, &x, cfg.repeats, &clock)?;
                    write!(out, " {secs:>12.6e}")?;
                }
                None => write!(out, " {:>12}", "-")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

fn fmt_energy_row(out: &mut impl Write, label: &str, ops: &NetworkOps) -> io::Result<()> {
    writeln!(
        out,
        "{label}: mul={:.4e} add={:.4e} shift={:.4e} flops_1={:.4e} sops={:.4e}",
        ops.neuron_muls, ops.neuron_adds, ops.neuron_shifts, ops.first_layer_flops, ops.sops
    )
}

fn measured_ops(model: &InferenceModel, trace: &InferenceTrace, samples: usize) -> NetworkOps {
    let mut neuron = OpCounters::default();
    let (mut flops, mut sops) = (0.0, 0.0);
    let mut first = true;
    for a in &trace.activity {
        if a.neuron {
            neuron.merge(&a.ops);
        } else if first && a.ops.muls > 0 {
            flops += a.ops.muls as f64;
            first = false;
        } else {
            sops += a.ops.adds as f64;
            first = false;
        }
    }
    let per = samples as f64;
    let label = if model.is_quantized() { "quantized model" } else { "float model" };
    NetworkOps {
        label: label.into(),
        neuron_muls: neuron.muls as f64 / per,
        neuron_adds: neuron.adds as f64 / per,
        neuron_shifts: neuron.shifts as f64 / per,
        first_layer_flops: flops / per,
        sops: sops / per,
    }
}

fn rated_ops(model: &InferenceModel, steps: u64, rates_text: &str) -> CliResult<NetworkOps> {
    let mut rates = std::collections::BTreeMap::new();
    for (i, line) in rates_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed = line
            .split_once('=')
            .and_then(|(k, v)| Some((k.trim().parse::<usize>().ok()?, v.trim().parse::<f64>().ok()?)));
        let (layer, rate) = parsed.ok_or_else(|| CliError::data(format!("rates line {}: expected layer=rate", i + 1)))?;
        if !(0.0..=1.0).contains(&rate) {
            return Err(CliError::data(format!("rates line {}: rate {rate} outside [0, 1]", i + 1)));
        }
        rates.insert(layer, rate);
    }
    let mut ops = NetworkOps {
        label: if model.is_quantized() { "quantized model" } else { "float model" }.into(),
        neuron_muls: 0.0,
        neuron_adds: 0.0,
        neuron_shifts: 0.0,
        first_layer_flops: 0.0,
        sops: 0.0,
    };
    let mut first = true;
    for (i, layer) in model.layers.iter().enumerate() {
        match layer {
            ModelLayer::Linear(l) => {
                let flops = (l.in_features() * l.out_features()) as f64;
                if first {
                    ops.first_layer_flops = flops * steps as f64;
                    first = false;
                } else {
                    let rate = rates.get(&i).ok_or_else(|| CliError::data(format!("no firing rate for layer {i}")))?;
                    ops.sops += ssnn_core::analysis::sops(*rate, steps, flops);
                }
            }
            ModelLayer::NeuronFloat { dilation, weights, .. } => {
                let taps = in_range_taps(steps as usize, weights.cols(), *dilation) as f64 * weights.rows() as f64;
                ops.neuron_muls += taps;
                ops.neuron_adds += taps + (steps as usize * weights.rows()) as f64;
                first = false;
            }
            ModelLayer::NeuronQuantized { order, dilation, weights, .. } => {
                let taps = in_range_taps(steps as usize, *order, *dilation) as f64 * weights.rows() as f64;
                ops.neuron_shifts += taps;
                ops.neuron_adds += taps + (steps as usize * weights.rows()) as f64;
                first = false;
            }
        }
    }
    Ok(ops)
}

#[allow(clippy::too_many_arguments)]
fn cmd_energy(
    preset: Option<&str>,
    model: Option<&Path>,
    input: Option<&Path>,
    rates: Option<&Path>,
    steps: Option<u64>,
    sweep: bool,
    order: Option<u64>,
    out: &mut impl Write,
) -> CliResult {
    let em = EnergyModel::default();
    if sweep {
        writeln!(out, "{:>6} {:>6} {:>14} {:>14} {:>8}", "T", "k", "psn_pJ", "shift_cw_pJ", "ratio")?;
        for t in [8u64, 16, 32, 64, 128] {
            let k = order.unwrap_or(t).min(t);
            let psn = neuron_energy(NeuronKind::Psn, t, k, &em)?;
            let ours = neuron_energy(NeuronKind::ShiftChannelWise, t, k, &em)?;
            writeln!(out, "{t:>6} {k:>6} {psn:>14.2} {ours:>14.2} {:>8.3}", psn / ours)?;
        }
        return Ok(());
    }
    let entries = match (preset, model) {
        (Some("seq-cifar100"), _) => sequential_cifar100_counts().to_vec(),
        (Some(other), _) => return Err(CliError::usage(format!("unknown preset `{other}`"))),
        (None, Some(path)) => {
            let m = read_model(path)?;
            let ops = match (input, rates) {
                (Some(input), _) => {
                    let x = read_activations(&mut BufReader::new(open(input)?))?;
                    let engine = if m.is_quantized() { EngineKind::ShiftInt } else { EngineKind::DirectLoop };
                    let trace = m.forward(&x, engine)?;
                    measured_ops(&m, &trace, x.dims().n)
                }
                (None, Some(rates)) => {
                    let text = std::fs::read_to_string(rates)
                        .map_err(|e| CliError::data(format!("cannot read {}: {e}", rates.display())))?;
                    rated_ops(&m, steps.unwrap_or(0), &text)?
                }
                (None, None) => return Err(CliError::usage("--model needs --input or --rates with --steps".into())),
            };
            fmt_energy_row(out, "per-sample counts", &ops)?;
            vec![ops]
        }
        (None, None) => return Err(CliError::usage("give --preset, --model or --sweep".into())),
    };
    let report = network_energy_report(&entries, &em)?;
    write!(out, "{report}")?;
    Ok(())
}

fn cmd_rf(cfg: &Config, out: &mut impl Write) -> CliResult {
    let mc: ModelConfig = cfg.model()?;
    if mc.layers == 0 {
        return Err(CliError::usage("layers must be at least 1".into()));
    }
    let dilations = mc.dilations();
    let orders = vec![mc.order; mc.layers];
    writeln!(out, "{:<6} {:>6} {:>9} {:>16}", "layer", "order", "dilation", "receptive_field")?;
    for l in 1..=mc.layers {
        let rf = receptive_field(&orders[..l], &dilations[..l])?;
        writeln!(out, "{l:<6} {:>6} {:>9} {rf:>16}", orders[l - 1], dilations[l - 1])?;
    }
    let schedule = match mc.dilation {
        DilationSchedule::Sawtooth => "sawtooth".to_string(),
        DilationSchedule::Fixed(d) => format!("fixed d={d}"),
    };
    writeln!(out, "total ({schedule}): {}", receptive_field(&orders, &dilations)?)?;
    Ok(())
}

fn run(cli: Cli, out: &mut impl Write) -> CliResult {
    match cli.command {
        Command::Quantize { input, output } => cmd_quantize(&input, &output, out),
        Command::Infer { model, input, output, engine, reference } => {
            cmd_infer(&model, &input, output.as_deref(), engine.as_deref(), reference.as_deref(), out)
        }
        Command::Train { cfg, save } => {
            let c = cfg.load()?;
            if cfg.dump_config {
                return Ok(write!(out, "{}", c.dump())?);
            }
            cmd_train(&c, save.as_deref(), out)
        }
        Command::Bench { cfg, no_sweep } => {
            let c = cfg.load()?;
            if cfg.dump_config {
                return Ok(write!(out, "{}", c.dump())?);
            }
            cmd_bench(&c, cli.threads, !no_sweep, out)
        }
        Command::Energy { preset, model, input, rates, steps, sweep, order } => cmd_energy(
            preset.as_deref(),
            model.as_deref(),
            input.as_deref(),
            rates.as_deref(),
            steps,
            sweep,
            order,
            out,
        ),
        Command::Rf { cfg } => {
            let c = cfg.load()?;
            if cfg.dump_config {
                return Ok(write!(out, "{}", c.dump())?);
            }
            cmd_rf(&c, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let rendered = e.to_string();
            eprintln!("{}", rendered.lines().next().unwrap_or("usage error"));
            return ExitCode::from(CliError::USAGE);
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match run(cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
