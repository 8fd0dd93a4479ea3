//! Flat `key=value` configuration shared by every command.

use std::fmt::Write as _;

use ssnn_core::engines::{EngineKind, BLOCK_SIZES};
use ssnn_core::network::FusionStats;
use ssnn_core::quant::QuantGradMode;
use ssnn_core::train::{
    DilationSchedule, ModelConfig, OptimizerKind, SurrogateConfig, SurrogateKind, TaskKind, ToyTask, TrainConfig,
};

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub task: TaskKind,
    pub lag: usize,
    pub steps: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub channels: usize,
    pub layers: usize,
    pub order: usize,
    pub dilation: DilationSchedule,
    pub shared_weights: bool,
    pub quantized: bool,
    pub grad_mode: QuantGradMode,
    pub surrogate: SurrogateKind,
    pub alpha: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub fusion_stats: FusionStats,
    pub engine: EngineKind,
    pub repeats: usize,
    pub engines: Vec<EngineKind>,
    pub block_sizes: Vec<usize>,
    pub sweep_steps: Vec<usize>,
}

impl Default for Config {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        Config {
            task: TaskKind::DelayedXor,
            lag: 6,
            steps: 20,
            train_size: 512,
            test_size: 256,
            channels: m.channels,
            layers: m.layers,
            order: m.order,
            dilation: m.dilation,
            shared_weights: m.shared_weights,
            quantized: m.quantized,
            grad_mode: m.grad_mode,
            surrogate: m.surrogate.kind,
            alpha: m.surrogate.alpha,
            optimizer: t.optimizer,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            fusion_stats: t.fusion,
            engine: m.engine,
            repeats: 5,
            engines: vec![EngineKind::DirectLoop, EngineKind::MatMul, EngineKind::BlockedDirect, EngineKind::ShiftInt],
            block_sizes: BLOCK_SIZES.to_vec(),
            sweep_steps: vec![8, 16, 32, 64, 128],
        }
    }
}

fn usage(msg: String) -> CliError {
    CliError::usage(msg)
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| usage(format!("config key `{key}`: cannot parse `{value}`")))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value.split(',').map(|v| number(key, v.trim())).collect()
}

fn flag(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(usage(format!("config key `{key}`: expected true or false, got `{value}`"))),
    }
}

fn named<T>(key: &str, value: &str, parsed: Option<T>) -> Result<T, CliError> {
    parsed.ok_or_else(|| usage(format!("config key `{key}`: unknown value `{value}`")))
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let value = value.trim();
        match key.trim() {
            "task" => self.task = named(key, value, TaskKind::parse(value))?,
            "lag" => self.lag = number(key, value)?,
            "steps" => self.steps = number(key, value)?,
            "train_size" => self.train_size = number(key, value)?,
            "test_size" => self.test_size = number(key, value)?,
            "channels" => self.channels = number(key, value)?,
            "layers" => self.layers = number(key, value)?,
            "order" => self.order = number(key, value)?,
            "dilation" => {
                self.dilation = match value {
                    "sawtooth" => DilationSchedule::Sawtooth,
                    v => DilationSchedule::Fixed(number(key, v)?),
                }
            }
            "shared_weights" => self.shared_weights = flag(key, value)?,
            "quantized" => self.quantized = flag(key, value)?,
            "grad_mode" => self.grad_mode = named(key, value, QuantGradMode::parse(value))?,
            "surrogate" => self.surrogate = named(key, value, SurrogateKind::parse(value))?,
            "alpha" => self.alpha = number(key, value)?,
            "optimizer" => self.optimizer = named(key, value, OptimizerKind::parse(value))?,
            "learning_rate" => self.learning_rate = number(key, value)?,
            "epochs" => self.epochs = number(key, value)?,
            "batch_size" => self.batch_size = number(key, value)?,
            "seed" => self.seed = number(key, value)?,
            "fusion_stats" => {
                self.fusion_stats = match value {
                    "batch" => FusionStats::Batch,
                    "running" => FusionStats::Running,
                    _ => return Err(usage(format!("config key `{key}`: unknown value `{value}`"))),
                }
            }
            "engine" => self.engine = EngineKind::parse(value).map_err(|e| usage(e.to_string()))?,
            "repeats" => self.repeats = number(key, value)?,
            "engines" => {
                self.engines = value
                    .split(',')
                    .map(|v| EngineKind::parse(v.trim()).map_err(|e| usage(e.to_string())))
                    .collect::<Result<_, _>>()?
            }
            "block_sizes" => self.block_sizes = list(key, value)?,
            "sweep_steps" => self.sweep_steps = list(key, value)?,
            other => return Err(usage(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies every `key=value` line; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| usage(format!("config line {}: expected key=value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_override(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair.split_once('=').ok_or_else(|| usage(format!("--set expects key=value, got `{pair}`")))?;
        self.set(k, v)
    }

    pub fn dump(&self) -> String {
        let join = |v: &[String]| v.join(",");
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        line("task", self.task.name().into());
        line("lag", self.lag.to_string());
        line("steps", self.steps.to_string());
        line("train_size", self.train_size.to_string());
        line("test_size", self.test_size.to_string());
        line("channels", self.channels.to_string());
        line("layers", self.layers.to_string());
        line("order", self.order.to_string());
        line(
            "dilation",
            match self.dilation {
                DilationSchedule::Sawtooth => "sawtooth".into(),
                DilationSchedule::Fixed(d) => d.to_string(),
            },
        );
        line("shared_weights", self.shared_weights.to_string());
        line("quantized", self.quantized.to_string());
        line("grad_mode", self.grad_mode.name().into());
        line("surrogate", self.surrogate.name().into());
        line("alpha", self.alpha.to_string());
        line("optimizer", self.optimizer.name().into());
        line("learning_rate", self.learning_rate.to_string());
        line("epochs", self.epochs.to_string());
        line("batch_size", self.batch_size.to_string());
        line("seed", self.seed.to_string());
        line(
            "fusion_stats",
            match self.fusion_stats {
                FusionStats::Batch => "batch".into(),
                FusionStats::Running => "running".into(),
            },
        );
        line("engine", self.engine.name().into());
        line("repeats", self.repeats.to_string());
        line("engines", join(&self.engines.iter().map(|e| e.name().to_string()).collect::<Vec<_>>()));
        line("block_sizes", join(&self.block_sizes.iter().map(usize::to_string).collect::<Vec<_>>()));
        line("sweep_steps", join(&self.sweep_steps.iter().map(usize::to_string).collect::<Vec<_>>()));
        out
    }

    pub fn task(&self) -> ToyTask {
        ToyTask {
            kind: self.task,
            lag: self.lag,
            steps: self.steps,
            train_size: self.train_size,
            test_size: self.test_size,
            seed: self.seed,
        }
    }

    pub fn model(&self) -> Result<ModelConfig, CliError> {
        Ok(ModelConfig {
            channels: self.channels,
            layers: self.layers,
            order: self.order,
            dilation: self.dilation.clone(),
            shared_weights: self.shared_weights,
            quantized: self.quantized,
            grad_mode: self.grad_mode,
            surrogate: SurrogateConfig::new(self.surrogate, self.alpha).map_err(|e| usage(e.to_string()))?,
            engine: self.engine,
        })
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            fusion: self.fusion_stats,
        }
    }
}
