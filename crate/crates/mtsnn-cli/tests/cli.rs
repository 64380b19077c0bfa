//! End-to-end contract tests for the `mtsnn` binary: artifact layout,
//! exit codes, determinism, and checkpoint consistency, all on a small
//! synthetic dataset written in the standard IDX container format.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mtsnn"))
}

fn idx_images(n: usize) -> Vec<u8> {
    let mut b = vec![0, 0, 0x08, 3];
    for d in [n as u32, 28, 28] {
        b.extend_from_slice(&d.to_be_bytes());
    }
    // Class k gets a bright block in a class-specific place so the data
    // is learnable in principle; exact separability is irrelevant here.
    for i in 0..n {
        let class = i % 10;
        for y in 0..28usize {
            for x in 0..28usize {
                let lit = y / 3 == class && x / 7 == i % 4;
                b.push(if lit { 250 } else { 10 });
            }
        }
    }
    b
}

fn idx_labels(n: usize) -> Vec<u8> {
    let mut b = vec![0, 0, 0x08, 1];
    b.extend_from_slice(&(n as u32).to_be_bytes());
    b.extend((0..n).map(|i| (i % 10) as u8));
    b
}

/// Synthetic `mnist`-layout dataset in a temp directory.
fn synth_data_dir(train: usize, test: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mnist = dir.path().join("mnist");
    std::fs::create_dir_all(&mnist).unwrap();
    std::fs::write(mnist.join("train-images-idx3-ubyte"), idx_images(train)).unwrap();
    std::fs::write(mnist.join("train-labels-idx1-ubyte"), idx_labels(train)).unwrap();
    std::fs::write(mnist.join("t10k-images-idx3-ubyte"), idx_images(test)).unwrap();
    std::fs::write(mnist.join("t10k-labels-idx1-ubyte"), idx_labels(test)).unwrap();
    dir
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.cfg");
    let text = format!(
        "dataset = mnist\narch = 784-16-10\ntrain.epochs = 1\ntrain.batch = 16\n\
         train.time_steps = 1\ntrain.seed = 7\ndata.crop_pad = 0\nmetrics.wall_clock = false\n{extra}"
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn train_writes_artifacts_and_repeats_bit_identically() {
    let data = synth_data_dir(48, 16);
    let cfg = write_config(data.path(), "");
    let out_a = data.path().join("run-a");
    let out_b = data.path().join("run-b");
    for out_dir in [&out_a, &out_b] {
        let out = run(bin()
            .args(["train", "--config"])
            .arg(&cfg)
            .args(["--data-dir"])
            .arg(data.path())
            .args(["--out-dir"])
            .arg(out_dir)
            .arg("--quiet"));
        assert_exit(&out, 0);
    }
    for name in ["metrics.csv", "checkpoint.mtsn", "manifest.cfg"] {
        assert!(out_a.join(name).exists(), "{name} missing");
    }
    let csv_a = std::fs::read(out_a.join("metrics.csv")).unwrap();
    let csv_b = std::fs::read(out_b.join("metrics.csv")).unwrap();
    assert_eq!(csv_a, csv_b, "seeded runs must produce identical metrics files");

    let text = String::from_utf8(csv_a).unwrap();
    assert!(text.starts_with("epoch,train_loss,train_acc,test_acc,wall_seconds"));
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn manifest_reproduces_the_run() {
    let data = synth_data_dir(32, 16);
    let cfg = write_config(data.path(), "");
    let out_a = data.path().join("orig");
    let out = run(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--data-dir"])
        .arg(data.path())
        .args(["--out-dir"])
        .arg(&out_a)
        .arg("--quiet"));
    assert_exit(&out, 0);

    // The manifest is itself a valid config; rerunning it reproduces
    // the metrics byte for byte.
    let out_b = data.path().join("replay");
    let out = run(bin()
        .args(["train", "--config"])
        .arg(out_a.join("manifest.cfg"))
        .args(["--data-dir"])
        .arg(data.path())
        .args(["--out-dir"])
        .arg(&out_b)
        .arg("--quiet"));
    assert_exit(&out, 0);
    assert_eq!(
        std::fs::read(out_a.join("metrics.csv")).unwrap(),
        std::fs::read(out_b.join("metrics.csv")).unwrap()
    );
}

#[test]
fn eval_agrees_with_the_final_csv_row() {
    let data = synth_data_dir(48, 16);
    let cfg = write_config(data.path(), "");
    let out_dir = data.path().join("run");
    let out = run(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--data-dir"])
        .arg(data.path())
        .args(["--out-dir"])
        .arg(&out_dir)
        .arg("--quiet"));
    assert_exit(&out, 0);

    let csv = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    let test_acc: f64 = last.split(',').nth(3).unwrap().parse().unwrap();

    let out = run(bin()
        .args(["eval", "--checkpoint"])
        .arg(out_dir.join("checkpoint.mtsn"))
        .args(["--data-dir"])
        .arg(data.path())
        .arg("--quiet"));
    assert_exit(&out, 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let line = stdout.lines().next().unwrap();
    let printed: f64 = line
        .trim_start_matches("accuracy: ")
        .trim_end_matches('%')
        .parse()
        .unwrap();
    assert!(
        (printed / 100.0 - test_acc).abs() < 5e-5,
        "eval printed {printed}%, csv row had {test_acc}"
    );
    assert!(stdout.contains("confusion"), "{stdout}");
}

#[test]
fn missing_dataset_is_a_data_error_naming_the_path() {
    let data = synth_data_dir(32, 16);
    let cfg = write_config(data.path(), "");
    let out = run(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--data-dir", "/nonexistent-mtsnn-data"])
        .args(["--out-dir"])
        .arg(data.path().join("x"))
        .arg("--quiet"));
    assert_exit(&out, 3);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("nonexistent-mtsnn-data"), "{stderr}");
}

#[test]
fn invalid_config_is_a_config_error() {
    let data = synth_data_dir(32, 16);
    let cfg = write_config(data.path(), "bogus.key = 1\n");
    let out = run(bin().args(["train", "--config"]).arg(&cfg).arg("--quiet"));
    assert_exit(&out, 2);
}

#[test]
fn corrupt_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.mtsn");
    std::fs::write(&path, b"XXXX not a checkpoint").unwrap();
    let out = run(bin().args(["inspect", "--checkpoint"]).arg(&path));
    assert_exit(&out, 3);
    let out = run(bin().args(["eval", "--checkpoint"]).arg(&path).arg("--quiet"));
    assert_exit(&out, 3);
}

#[test]
fn inspect_prints_the_header() {
    let data = synth_data_dir(32, 16);
    let cfg = write_config(data.path(), "");
    let out_dir = data.path().join("run");
    let out = run(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--data-dir"])
        .arg(data.path())
        .args(["--out-dir"])
        .arg(&out_dir)
        .arg("--quiet"));
    assert_exit(&out, 0);
    let out = run(bin()
        .args(["inspect", "--checkpoint"])
        .arg(out_dir.join("checkpoint.mtsn")));
    assert_exit(&out, 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    for needle in ["784-16-10", "mnist", "s_max 15", "f2"] {
        assert!(stdout.contains(needle), "missing {needle} in {stdout}");
    }
}

#[test]
fn gradcheck_passes_within_tolerance() {
    let out = run(bin().args(["gradcheck", "--cases", "60"]).arg("--quiet"));
    assert_exit(&out, 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("max relative discrepancy"), "{stdout}");
    assert!(stdout.contains("OK"), "{stdout}");
}

#[test]
fn fetch_unreachable_host_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.cfg");
    std::fs::write(
        &manifest,
        format!("mnist.t10k-labels-idx1-ubyte = https://127.0.0.1:1/x.gz {}\n", "0".repeat(64)),
    )
    .unwrap();
    let out = run(bin()
        .args(["fetch", "--dataset", "mnist", "--manifest"])
        .arg(&manifest)
        .args(["--data-dir"])
        .arg(dir.path())
        .arg("--quiet"));
    assert_exit(&out, 3);
}

#[test]
fn fetch_unknown_dataset_is_a_config_error() {
    let out = run(bin().args(["fetch", "--dataset", "imagenet", "--quiet"]));
    assert_exit(&out, 2);
}

#[test]
fn sweep_emits_long_form_rows() {
    let data = synth_data_dir(32, 16);
    let cfg = write_config(
        data.path(),
        "sweep.parameter = s_max\nsweep.values = 1, 3\nsweep.repetitions = 2\n",
    );
    let out_dir = data.path().join("sweep");
    let out = run(bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--data-dir"])
        .arg(data.path())
        .args(["--out-dir"])
        .arg(&out_dir)
        .arg("--quiet"));
    assert_exit(&out, 0);
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "parameter,value,repetition,epoch,train_loss,train_acc,test_acc"
    );
    // 2 cells x 2 repetitions x 1 epoch.
    assert_eq!(lines.count(), 4);
    assert!(csv.contains("s_max,1,0,1,"));
    assert!(csv.contains("s_max,3,1,1,"));
}

#[test]
fn sweep_without_block_is_a_config_error() {
    let data = synth_data_dir(32, 16);
    let cfg = write_config(data.path(), "");
    let out = run(bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--data-dir"])
        .arg(data.path())
        .arg("--quiet"));
    assert_exit(&out, 2);
}

#[test]
fn quiet_mode_keeps_stderr_empty_on_success() {
    let data = synth_data_dir(32, 16);
    let cfg = write_config(data.path(), "");
    let out = run(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--data-dir"])
        .arg(data.path())
        .args(["--out-dir"])
        .arg(data.path().join("q"))
        .arg("--quiet"));
    assert_exit(&out, 0);
    assert!(out.stderr.is_empty(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn all_presets_parse_through_the_grammar() {
    let presets = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    let mut seen = 0;
    for entry in std::fs::read_dir(&presets).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().map_or(false, |e| e == "cfg") {
            mtsnn::config::RunConfig::from_file(&path)
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    // Every architecture of the experiment tables has a preset.
    assert!(seen >= 10, "only {seen} presets found");
}

#[test]
fn env_var_supplies_the_data_dir() {
    let data = synth_data_dir(32, 16);
    let cfg = write_config(data.path(), "");
    let out = run(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .env("MTSNN_DATA_DIR", data.path())
        .args(["--out-dir"])
        .arg(data.path().join("env-run"))
        .arg("--quiet"));
    assert_exit(&out, 0);
}
