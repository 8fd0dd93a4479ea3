//! Command-line behaviour against golden outputs in `tests/golden/`.
//!
//! Set `UPDATE_GOLDEN=1` to rewrite the golden files from the current
//! output.

use std::path::{Path, PathBuf};
use std::process::Command;

use ssnn_core::io::{decode_model, encode_model, write_activations, Dtype};
use ssnn_core::train::ToyTask;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn ssnn(dir: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_ssnn")).current_dir(dir).args(args).output().expect("spawn ssnn");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let run = ssnn(dir, args);
    assert_eq!(run.code, 0, "ssnn {args:?}: {}", run.stderr);
    run.stdout
}

fn golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
    assert_eq!(actual, expected, "output differs from {name}");
}

const TINY: &[&str] =
    &["--set", "epochs=12", "--set", "train_size=64", "--set", "test_size=32", "--set", "channels=8", "--set", "seed=1"];

fn with_tiny<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(TINY.iter().copied()).collect()
}

/// Temporary directory holding a tiny trained model, its quantized form and
/// an activation file.
fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_tiny(&["train", "--save", "float.ssnn"]));
    ok(dir.path(), &["quantize", "--input", "float.ssnn", "--output", "quant.ssnn"]);
    let x = ToyTask { train_size: 4, test_size: 1, seed: 5, ..ToyTask::delayed_xor(6, 20) }.datasets().unwrap().0.inputs;
    let mut f = std::fs::File::create(dir.path().join("input.act")).unwrap();
    write_activations(&x, Dtype::F32, &mut f).unwrap();
    dir
}

#[test]
fn rf_sawtooth_reaches_seven() {
    let out = ok(Path::new("."), &["rf", "--set", "order=2", "--set", "layers=3"]);
    assert!(out.ends_with("total (sawtooth): 7\n"));
    golden("rf_sawtooth.txt", &out);
}

#[test]
fn rf_fixed_dilation() {
    let out = ok(Path::new("."), &["rf", "--set", "order=2", "--set", "layers=3", "--set", "dilation=1"]);
    assert!(out.ends_with("total (fixed d=1): 4\n"));
    golden("rf_fixed.txt", &out);
}

#[test]
fn rf_rejects_unknown_key() {
    let run = ssnn(Path::new("."), &["rf", "--set", "colour=blue"]);
    assert_eq!(run.code, 1);
    assert_eq!(run.stderr, "error: unknown config key `colour`\n");
    assert!(run.stdout.is_empty());
}

#[test]
fn energy_preset() {
    let out = ok(Path::new("."), &["energy", "--preset", "seq-cifar100"]);
    assert!(out.contains("91.46") && out.contains("10.66"), "{out}");
    golden("energy_preset.txt", &out);
}

#[test]
fn energy_sweep() {
    golden("energy_sweep.txt", &ok(Path::new("."), &["energy", "--sweep"]));
    golden("energy_sweep_k4.txt", &ok(Path::new("."), &["energy", "--sweep", "--order", "4"]));
}

#[test]
fn energy_from_model() {
    let dir = fixture();
    std::fs::write(dir.path().join("rates.txt"), "# synaptic layers\n2=0.25\n4=0.5\n6=0.125\n").unwrap();
    let rated = ok(dir.path(), &["energy", "--model", "quant.ssnn", "--rates", "rates.txt", "--steps", "20"]);
    golden("energy_rates.txt", &rated);
    let measured = ok(dir.path(), &["energy", "--model", "quant.ssnn", "--input", "input.act"]);
    assert!(measured.contains("mul=0.0000e0"), "{measured}");
    golden("energy_measured.txt", &measured);
}

#[test]
fn energy_errors() {
    let run = ssnn(Path::new("."), &["energy", "--preset", "imagenet"]);
    assert_eq!(run.code, 1, "{}", run.stderr);
    let run = ssnn(Path::new("."), &["energy"]);
    assert_eq!(run.code, 1);
    let dir = fixture();
    std::fs::write(dir.path().join("rates.txt"), "2=1.5\n").unwrap();
    let run = ssnn(dir.path(), &["energy", "--model", "quant.ssnn", "--rates", "rates.txt", "--steps", "20"]);
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("outside [0, 1]"), "{}", run.stderr);
}

#[test]
fn train_tiny_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &with_tiny(&["train", "--save", "m.ssnn"]));
    golden("train_tiny.txt", &out);
    let again = tempfile::tempdir().unwrap();
    assert_eq!(ok(again.path(), &with_tiny(&["train", "--save", "m.ssnn"])), out);
    assert_eq!(std::fs::read(dir.path().join("m.ssnn")).unwrap(), std::fs::read(again.path().join("m.ssnn")).unwrap());
}

#[test]
fn train_divergence_is_a_numeric_error() {
    let run = ssnn(Path::new("."), &with_tiny(&["train", "--set", "learning_rate=1e300"]));
    assert_eq!(run.code, 3, "{}", run.stderr);
    assert!(run.stderr.starts_with("error: non-finite value"), "{}", run.stderr);
}

#[test]
fn dump_config() {
    let out = ok(Path::new("."), &["train", "--dump-config", "--set", "dilation=2", "--set", "quantized=true"]);
    golden("dump_config.txt", &out);
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), &out).unwrap();
    assert_eq!(ok(dir.path(), &["rf", "--config", "run.cfg", "--dump-config"]), out);
}

#[test]
fn quantize_reports_errors_per_layer() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_tiny(&["train", "--save", "float.ssnn"]));
    let out = ok(dir.path(), &["quantize", "--input", "float.ssnn", "--output", "quant.ssnn"]);
    golden("quantize.txt", &out);
    let run = ssnn(dir.path(), &["quantize", "--input", "quant.ssnn", "--output", "again.ssnn"]);
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("already quantized"));
    assert!(!dir.path().join("again.ssnn").exists());
}

#[test]
fn infer_quantized_is_multiplication_free() {
    let dir = fixture();
    let out = ok(dir.path(), &["infer", "--model", "quant.ssnn", "--input", "input.act", "--reference", "float.ssnn"]);
    assert!(out.contains("neuron-layer muls: 0\n"));
    assert!(!out.contains("spike rate neuron 0: 0.000000"), "{out}");
    golden("infer_quantized.txt", &out);
    golden("infer_float.txt", &ok(dir.path(), &["infer", "--model", "float.ssnn", "--input", "input.act"]));
}

#[test]
fn infer_is_deterministic_across_engines_and_runs() {
    let dir = fixture();
    let mut outputs = Vec::new();
    for (i, engine) in ["shift", "shift", "direct", "matmul", "blocked"].iter().enumerate() {
        let file = format!("out{i}.act");
        ok(dir.path(), &["infer", "--model", "quant.ssnn", "--input", "input.act", "--engine", engine, "--output", &file]);
        outputs.push(std::fs::read(dir.path().join(file)).unwrap());
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn infer_errors() {
    let dir = fixture();
    let run = ssnn(dir.path(), &["infer", "--model", "missing.ssnn", "--input", "input.act"]);
    assert_eq!(run.code, 2);
    std::fs::write(dir.path().join("junk.ssnn"), b"not a model").unwrap();
    let run = ssnn(dir.path(), &["infer", "--model", "junk.ssnn", "--input", "input.act"]);
    assert_eq!(run.code, 2, "{}", run.stderr);
    let run = ssnn(dir.path(), &["infer", "--model", "quant.ssnn", "--input", "input.act", "--engine", "gpu"]);
    assert_eq!(run.code, 1);
    // a truncated model is rejected, not read short
    let bytes = std::fs::read(dir.path().join("quant.ssnn")).unwrap();
    std::fs::write(dir.path().join("cut.ssnn"), &bytes[..bytes.len() - 3]).unwrap();
    let run = ssnn(dir.path(), &["infer", "--model", "cut.ssnn", "--input", "input.act"]);
    assert_eq!(run.code, 2);
}

#[test]
fn model_file_save_load_save_is_identical() {
    let dir = fixture();
    for name in ["float.ssnn", "quant.ssnn"] {
        let bytes = std::fs::read(dir.path().join(name)).unwrap();
        let again = encode_model(&decode_model(&bytes).unwrap()).unwrap();
        assert_eq!(bytes, again, "{name}");
    }
}

/// Timings vary from run to run; numbers and selection marks are masked.
fn mask_timings(text: &str) -> String {
    text.lines()
        .map(|line| {
            line.split_whitespace()
                .filter(|tok| *tok != "*")
                .map(|tok| if tok.contains('.') && tok.chars().any(|c| c.is_ascii_digit()) { "#" } else { tok })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .filter(|line| !line.starts_with("chosen layout"))
        .map(|line| line + "\n")
        .collect()
}

#[test]
fn bench_report_shape() {
    let args = with_tiny(&["bench", "--set", "train_size=8", "--set", "block_sizes=16", "--set", "sweep_steps=8,16"]);
    let out = ok(Path::new("."), &args);
    let selected = out.lines().filter(|l| l.ends_with(" *")).count();
    assert_eq!(selected, 7, "one selection per layer\n{out}");
    golden("bench.txt", &mask_timings(&out));
}

#[test]
fn bench_rejects_zero_repeats() {
    let run = ssnn(Path::new("."), &with_tiny(&["bench", "--set", "repeats=0"]));
    assert_eq!(run.code, 2, "{}", run.stderr);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let run = ssnn(Path::new("."), &["compile"]);
    assert_eq!(run.code, 1);
    assert_eq!(run.stderr.lines().count(), 1, "{}", run.stderr);
}
