//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use mtsnn::checkpoint::{self, CheckpointHeader, FORMAT_VERSION};
use mtsnn::config::{DatasetKind, RunConfig};
use mtsnn::metrics::{MetricsWriter, SweepWriter};
use mtsnn::oracle::{oracle_gradient, random_tiny_net, relaxed_loss, TinyNet};
use mtsnn::training::{backward_pass, build_targets, evaluate, TargetEncoding, Trainer};
use mtsnn::{Error, Result};

fn apply_overrides(
    cfg: &mut RunConfig,
    seed: Option<u64>,
    epochs: Option<usize>,
    data_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
) {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    match data_dir {
        Some(d) => cfg.data_dir = d,
        None => {
            if let Ok(env) = std::env::var("MTSNN_DATA_DIR") {
                cfg.data_dir = PathBuf::from(env);
            }
        }
    }
    if let Some(o) = out_dir {
        cfg.out_dir = o;
    }
}

struct EpochRow {
    train_loss: f64,
    train_acc: f64,
    test_acc: f64,
    wall_seconds: f64,
}

/// Shared training loop: one `Trainer` over the configured number of
/// epochs, evaluating the test split after each. When `sink` is given,
/// metrics stream into it as they are produced.
fn run_training(
    cfg: &RunConfig,
    quiet: bool,
    mut sink: Option<&mut MetricsWriter>,
) -> Result<(Trainer<f32>, Vec<EpochRow>)> {
    let (train_split, test_split) = cfg.dataset.load(&cfg.data_dir)?;
    let mut trainer = Trainer::<f32>::from_run_config(cfg)?;
    let mut rows = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let m = trainer.train_epoch(&train_split, epoch)?;
        let eval = trainer.evaluate(&test_split)?;
        let wall_seconds = started.elapsed().as_secs_f64();
        if let Some(w) = sink.as_deref_mut() {
            w.row(epoch + 1, m.train_loss, m.train_acc, eval.accuracy, wall_seconds)?;
        }
        if !quiet {
            eprintln!(
                "epoch {:>3}/{}: train_loss {:.4}, train_acc {:.2}%, test_acc {:.2}%, {:.1}s",
                epoch + 1,
                cfg.epochs,
                m.train_loss,
                100.0 * m.train_acc,
                100.0 * eval.accuracy,
                wall_seconds
            );
        }
        rows.push(EpochRow {
            train_loss: m.train_loss,
            train_acc: m.train_acc,
            test_acc: eval.accuracy,
            wall_seconds,
        });
    }
    Ok((trainer, rows))
}

fn write_manifest(path: &Path, cfg: &RunConfig) -> Result<()> {
    let resolved = cfg.to_text();
    let hash = hex_digest(resolved.as_bytes());
    let manifest = format!(
        "# run manifest: reproducible as-is via `mtsnn train --config <this file>`\n\
         # manifest.config_sha256 = {hash}\n\
         # manifest.version = mtsnn {} (format {FORMAT_VERSION})\n\
         # manifest.seed = {}\n\
         {resolved}",
        env!("CARGO_PKG_VERSION"),
        cfg.seed
    );
    std::fs::write(path, manifest)?;
    Ok(())
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn header_for(cfg: &RunConfig, adam_step: u64) -> Result<CheckpointHeader> {
    Ok(CheckpointHeader {
        version: FORMAT_VERSION,
        arch: cfg.arch.clone(),
        dataset: cfg.dataset.name().to_string(),
        input_shape: cfg.dataset.shape(),
        classes: cfg.dataset.classes(),
        neuron: cfg.neuron_config()?,
        surrogate: cfg.surrogate_spec()?,
        time_steps: cfg.time_steps,
        norm: cfg.normalization(),
        adam_step,
    })
}

pub fn train(
    config: &Path,
    seed: Option<u64>,
    epochs: Option<usize>,
    data_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    quiet: bool,
) -> Result<()> {
    let mut cfg = RunConfig::from_file(config)?;
    apply_overrides(&mut cfg, seed, epochs, data_dir, out_dir);
    cfg.validate()?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    write_manifest(&cfg.out_dir.join("manifest.cfg"), &cfg)?;
    let mut metrics = MetricsWriter::create(&cfg.out_dir.join("metrics.csv"), cfg.wall_clock)?;
    let (trainer, rows) = run_training(&cfg, quiet, Some(&mut metrics))?;

    let header = header_for(&cfg, trainer.adam.step_count)?;
    checkpoint::save(
        &cfg.out_dir.join("checkpoint.mtsn"),
        &header,
        &trainer.net,
        &trainer.adam,
    )?;
    if let Some(last) = rows.last() {
        println!(
            "final: train_acc {:.2}%, test_acc {:.2}% ({} epochs, {} total seconds)",
            100.0 * last.train_acc,
            100.0 * last.test_acc,
            rows.len(),
            rows.iter().map(|r| r.wall_seconds).sum::<f64>() as u64
        );
    }
    Ok(())
}

pub fn eval(
    checkpoint_path: &Path,
    split_name: &str,
    data_dir: Option<PathBuf>,
    quiet: bool,
) -> Result<()> {
    let (header, net, _adam) = checkpoint::load::<f32>(checkpoint_path)?;
    let kind = DatasetKind::parse(&header.dataset)?;
    let data_root = data_dir
        .or_else(|| std::env::var("MTSNN_DATA_DIR").ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"));
    let (train_split, test_split) = kind.load(&data_root)?;
    let split = match split_name {
        "test" => test_split,
        "train" => train_split,
        other => {
            return Err(Error::Config(format!(
                "unknown split '{other}' (expected test or train)"
            )))
        }
    };
    if !quiet {
        eprintln!(
            "evaluating {} on {}/{} ({} samples, T = {})",
            checkpoint_path.display(),
            header.dataset,
            split.meta.split,
            split.len(),
            header.time_steps
        );
    }
    let result = evaluate(&net, &split, &header.norm, header.time_steps)?;
    println!("accuracy: {:.2}%", 100.0 * result.accuracy);
    println!("confusion (rows = true class, cols = predicted):");
    for row in result.confusion.rows() {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>5}")).collect();
        println!("  {}", cells.join(" "));
    }
    Ok(())
}

pub fn sweep(
    config: &Path,
    seed: Option<u64>,
    epochs: Option<usize>,
    data_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    quiet: bool,
) -> Result<()> {
    let mut cfg = RunConfig::from_file(config)?;
    apply_overrides(&mut cfg, seed, epochs, data_dir, out_dir);
    cfg.validate()?;
    let sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| Error::Config("config has no sweep block (sweep.parameter / sweep.values)".into()))?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut writer = SweepWriter::create(&cfg.out_dir.join("sweep.csv"), sweep.parameter.name())?;
    let mut summary: Vec<(String, f64)> = Vec::new();
    for (cell_idx, value) in sweep.values.iter().enumerate() {
        let cell_base = cfg.sweep_cell(sweep.parameter, value)?;
        let mut final_accs = Vec::new();
        for rep in 0..sweep.repetitions {
            let mut cell = cell_base.clone();
            cell.seed = cell_seed(cfg.seed, cell_idx, rep);
            if !quiet {
                eprintln!(
                    "sweep cell {} = {value}, repetition {rep} (seed {})",
                    sweep.parameter.name(),
                    cell.seed
                );
            }
            let (_, rows) = run_training(&cell, quiet, None)?;
            for (ep, row) in rows.iter().enumerate() {
                writer.row(
                    sweep.parameter.name(),
                    value,
                    rep,
                    ep + 1,
                    row.train_loss,
                    row.train_acc,
                    row.test_acc,
                )?;
            }
            if let Some(last) = rows.last() {
                final_accs.push(last.test_acc);
            }
        }
        let mean = final_accs.iter().sum::<f64>() / final_accs.len() as f64;
        summary.push((value.clone(), mean));
    }
    println!("sweep over {} ({} repetitions per cell):", sweep.parameter.name(), sweep.repetitions);
    for (value, mean) in &summary {
        println!("  {} = {:>8}: mean final test_acc {:.2}%", sweep.parameter.name(), value, 100.0 * mean);
    }
    Ok(())
}

/// Engine-vs-oracle gradient sweep. Returns whether every discrepancy
/// stayed within tolerance.
pub fn gradcheck(cases: usize, quiet: bool) -> Result<bool> {
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    const TOLERANCE: f64 = 1e-10;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xACCE97);
    // Worst relative discrepancy seen at each layer depth.
    let mut per_depth: Vec<f64> = Vec::new();
    let mut worst = 0.0f64;
    for case in 0..cases {
        let (net, t_steps) = random_tiny_net(case, &mut rng);
        let in_len = net.input_shape().len();
        let input: Vec<f64> = (0..in_len).map(|_| rng.gen_range(-10.0..25.0)).collect();
        let classes = net.output_classes();
        let label = rng.gen_range(0..classes);
        let amplitude = 4.0f64.min(net.neuron.s_max as f64);
        let enc = TargetEncoding::new(amplitude, net.neuron.s_max)?;
        let targets = build_targets::<f64>(&[label], classes, &enc);

        let trace = net
            .forward(&Array2::from_shape_vec((1, in_len), input.clone()).unwrap(), t_steps)?;
        let engine = backward_pass(&trace, &targets, &net, &net.surrogate)?;
        let oracle = oracle_gradient(
            &TinyNet::from_network(&net),
            &input,
            &targets.row(0).to_vec(),
            t_steps,
        )?;
        for (depth, (eg, og)) in engine.iter().zip(&oracle).enumerate() {
            if per_depth.len() <= depth {
                per_depth.resize(depth + 1, 0.0);
            }
            for (&a, &b) in eg.iter().zip(og.iter()) {
                let scale = a.abs().max(b.abs());
                let err = if scale < 1e-12 { 0.0 } else { (a - b).abs() / scale };
                per_depth[depth] = per_depth[depth].max(err);
                worst = worst.max(err);
            }
        }
    }

    println!("gradcheck: {cases} random tiny networks, tolerance {TOLERANCE:.0e}");
    for (depth, err) in per_depth.iter().enumerate() {
        println!("  parametric layer {depth}: max relative discrepancy {err:.3e}");
    }
    println!("  overall: {worst:.3e} -> {}", if worst <= TOLERANCE { "OK" } else { "FAIL" });

    if !quiet {
        // Secondary smoke test, not an authority: finite differences of
        // the relaxed forward (firing replaced by the surrogate's
        // antiderivative) agree with the rule's gradient only up to
        // O(g * v_th) terms, so the surrogate is scaled tiny and the
        // tolerance is loose.
        let fd = fd_smoke_test()?;
        eprintln!(
            "  fd smoke (non-authoritative, relaxed forward, tol 1e-3): max rel dev {fd:.2e}"
        );
    }
    Ok(worst <= TOLERANCE)
}

/// Finite-difference smoke test on the relaxed forward at T = 1.
fn fd_smoke_test() -> Result<f64> {
    use mtsnn::arch::{parse_arch, Shape};
    use mtsnn::network::Network;
    use mtsnn::neuron::NeuronConfig;
    use mtsnn::surrogate::{SurrogateKind, SurrogateSpec};

    let neuron = NeuronConfig::default();
    // Tiny height keeps the (1 + g v_th) factors within the tolerance.
    let surrogate = SurrogateSpec::new(SurrogateKind::F2, 5e-5, 20.0, 15, 10.0)?;
    let specs = parse_arch("2-3-2", Shape::Flat(2), 2)?;
    let net = Network::<f64>::build(specs, neuron, surrogate, 41)?;
    let tiny = TinyNet::from_network(&net);
    let input = [14.0, 9.0];
    let target = [4.0, 0.0];

    let analytic = oracle_gradient(&tiny, &input, &target, 1)?;
    let h = 1e-3;
    let mut max_dev = 0.0f64;
    for (li, layer_grads) in analytic.iter().enumerate() {
        for (wi, &a) in layer_grads.iter().enumerate() {
            let mut plus = tiny.clone();
            let mut minus = tiny.clone();
            bump_weight(&mut plus, li, wi, h);
            bump_weight(&mut minus, li, wi, -h);
            let fd = (relaxed_loss(&plus, &input, &target, 1)
                - relaxed_loss(&minus, &input, &target, 1))
                / (2.0 * h);
            let scale = a.abs().max(fd.abs());
            if scale > 1e-9 {
                max_dev = max_dev.max((a - fd).abs() / scale);
            }
        }
    }
    if max_dev > 1e-3 {
        return Err(Error::Numeric(format!(
            "fd smoke test deviation {max_dev:.2e} above 1e-3"
        )));
    }
    Ok(max_dev)
}

fn bump_weight(tiny: &mut TinyNet, layer: usize, w_idx: usize, delta: f64) {
    let mut li = 0;
    for l in &mut tiny.layers {
        match l {
            mtsnn::oracle::TinyLayer::Dense { w } => {
                if li == layer {
                    let cols = w[0].len();
                    w[w_idx / cols][w_idx % cols] += delta;
                    return;
                }
                li += 1;
            }
            mtsnn::oracle::TinyLayer::Conv { w, .. } => {
                if li == layer {
                    w[w_idx] += delta;
                    return;
                }
                li += 1;
            }
            _ => {}
        }
    }
    panic!("layer {layer} not found");
}

pub fn inspect(checkpoint_path: &Path) -> Result<()> {
    let header = checkpoint::read_header(checkpoint_path)?;
    println!("{header}");
    Ok(())
}

pub fn cell_seed(base: u64, cell: usize, rep: usize) -> u64 {
    base.wrapping_add(1009 * (cell as u64 + 1)).wrapping_add(rep as u64)
}
