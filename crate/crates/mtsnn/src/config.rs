//! Run configuration: a flat `key = value` format with dotted sections.
//!
//! Unknown keys are rejected, every value is validated before any
//! compute starts, and a parsed config serializes back to the same
//! format so run manifests stay diff-friendly.

use std::path::{Path, PathBuf};

use crate::data::Normalization;
use crate::neuron::NeuronConfig;
use crate::surrogate::{SurrogateKind, SurrogateSpec};
use crate::training::TrainConfig;
use crate::{Error, Result};

/// Datasets the engine knows how to load.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Fashion,
    Cifar10,
}

impl DatasetKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetKind::Mnist),
            "fashion" | "fashionmnist" | "fashion-mnist" => Ok(DatasetKind::Fashion),
            "cifar10" | "cifar-10" => Ok(DatasetKind::Cifar10),
            other => Err(Error::Config(format!("unknown dataset '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Fashion => "fashion",
            DatasetKind::Cifar10 => "cifar10",
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        match self {
            DatasetKind::Mnist | DatasetKind::Fashion => (1, 28, 28),
            DatasetKind::Cifar10 => (3, 32, 32),
        }
    }

    pub fn classes(&self) -> usize {
        10
    }

    /// Conventional normalization constants; overridable per run.
    pub fn default_norm(&self) -> Normalization {
        match self {
            DatasetKind::Mnist => Normalization { mean: vec![0.1307], std: vec![0.3081] },
            DatasetKind::Fashion => Normalization { mean: vec![0.2860], std: vec![0.3530] },
            DatasetKind::Cifar10 => Normalization {
                mean: vec![0.4914, 0.4822, 0.4465],
                std: vec![0.2470, 0.2435, 0.2616],
            },
        }
    }

    pub fn default_crop_pad(&self) -> usize {
        match self {
            DatasetKind::Mnist | DatasetKind::Fashion => 2,
            DatasetKind::Cifar10 => 4,
        }
    }

    pub fn default_lr(&self) -> f64 {
        match self {
            DatasetKind::Mnist | DatasetKind::Fashion => 0.005,
            DatasetKind::Cifar10 => 0.0005,
        }
    }

    /// Loads (train, test) splits from `data_root/<dataset>/` using the
    /// standard distribution file names.
    pub fn load(&self, data_root: &Path) -> Result<(crate::data::Split, crate::data::Split)> {
        let dir = data_root.join(self.name());
        match self {
            DatasetKind::Mnist | DatasetKind::Fashion => {
                let train = crate::data::load_idx_split(
                    &dir,
                    self.name(),
                    "train",
                    "train-images-idx3-ubyte",
                    "train-labels-idx1-ubyte",
                )?;
                let test = crate::data::load_idx_split(
                    &dir,
                    self.name(),
                    "test",
                    "t10k-images-idx3-ubyte",
                    "t10k-labels-idx1-ubyte",
                )?;
                Ok((train, test))
            }
            DatasetKind::Cifar10 => crate::data::load_cifar10(&dir),
        }
    }
}

/// Parameter a sweep walks over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    SurrogateKind,
    AlphaW,
    SMax,
    TimeSteps,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "surrogate.kind" => Ok(SweepParam::SurrogateKind),
            "alpha_w" => Ok(SweepParam::AlphaW),
            "s_max" => Ok(SweepParam::SMax),
            "T" => Ok(SweepParam::TimeSteps),
            other => Err(Error::Config(format!(
                "sweep parameter '{other}' not one of surrogate.kind, alpha_w, s_max, T"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::SurrogateKind => "surrogate.kind",
            SweepParam::AlphaW => "alpha_w",
            SweepParam::SMax => "s_max",
            SweepParam::TimeSteps => "T",
        }
    }
}

/// Grid description for `sweep` runs.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub parameter: SweepParam,
    pub values: Vec<String>,
    pub repetitions: usize,
}

/// Fully resolved configuration of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub arch: String,
    pub time_steps: usize,
    pub epochs: usize,
    pub seed: u64,
    pub batch: usize,
    pub lr: f64,
    pub target_amplitude: f64,
    pub tau_m: f64,
    pub v_th: f64,
    pub dt: f64,
    pub s_max: u32,
    pub surrogate_kind: SurrogateKind,
    pub alpha_h: f64,
    pub alpha_w: f64,
    pub data_dir: PathBuf,
    pub crop_pad: usize,
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
    pub out_dir: PathBuf,
    pub wall_clock: bool,
    pub sweep: Option<SweepSpec>,
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|v| parse_num::<f64>(key, v))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected true/false, got '{other}'"))),
    }
}

impl RunConfig {
    /// Parses the flat `key = value` text. Lines starting with `#` (or
    /// blank) are skipped; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut dataset = None;
        let mut arch = None;
        let mut time_steps = 2usize;
        let mut epochs = 200usize;
        let mut seed = 1u64;
        let mut batch = 128usize;
        let mut lr = None;
        let mut target_amplitude = 4.0;
        let mut tau_m = 10.0;
        let mut v_th = 10.0;
        let mut dt = 1.0;
        let mut s_max = 15u32;
        let mut surrogate_kind = SurrogateKind::F2;
        let mut alpha_h = 1.0;
        let mut alpha_w = 20.0;
        let mut data_dir = PathBuf::from("data");
        let mut crop_pad = None;
        let mut norm_mean = None;
        let mut norm_std = None;
        let mut out_dir = PathBuf::from("runs/run");
        let mut wall_clock = true;
        let mut sweep_parameter = None;
        let mut sweep_values: Option<Vec<String>> = None;
        let mut sweep_repetitions = 1usize;

        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value', got '{line}'", line_no + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "dataset" => dataset = Some(DatasetKind::parse(value)?),
                "arch" => arch = Some(value.to_string()),
                "train.time_steps" => time_steps = parse_num(key, value)?,
                "train.epochs" => epochs = parse_num(key, value)?,
                "train.seed" => seed = parse_num(key, value)?,
                "train.batch" => batch = parse_num(key, value)?,
                "train.lr" => lr = Some(parse_num(key, value)?),
                "train.target_amplitude" => target_amplitude = parse_num(key, value)?,
                "neuron.tau_m" => tau_m = parse_num(key, value)?,
                "neuron.v_th" => v_th = parse_num(key, value)?,
                "neuron.dt" => dt = parse_num(key, value)?,
                "neuron.s_max" => s_max = parse_num(key, value)?,
                "surrogate.kind" => surrogate_kind = SurrogateKind::parse(value)?,
                "surrogate.alpha_h" => alpha_h = parse_num(key, value)?,
                "surrogate.alpha_w" => alpha_w = parse_num(key, value)?,
                "data.dir" => data_dir = PathBuf::from(value),
                "data.crop_pad" => crop_pad = Some(parse_num(key, value)?),
                "data.norm_mean" => norm_mean = Some(parse_list(key, value)?),
                "data.norm_std" => norm_std = Some(parse_list(key, value)?),
                "out.dir" => out_dir = PathBuf::from(value),
                "metrics.wall_clock" => wall_clock = parse_bool(key, value)?,
                "sweep.parameter" => sweep_parameter = Some(SweepParam::parse(value)?),
                "sweep.values" => {
                    sweep_values =
                        Some(value.split(',').map(|v| v.trim().to_string()).collect())
                }
                "sweep.repetitions" => sweep_repetitions = parse_num(key, value)?,
                other => return Err(Error::Config(format!("unknown key '{other}'"))),
            }
        }

        let dataset =
            dataset.ok_or_else(|| Error::Config("missing required key 'dataset'".into()))?;
        let arch = arch.ok_or_else(|| Error::Config("missing required key 'arch'".into()))?;

        let sweep = match (sweep_parameter, sweep_values) {
            (Some(parameter), Some(values)) => {
                if values.is_empty() || values.iter().all(|v| v.is_empty()) {
                    return Err(Error::Config("sweep.values is empty".into()));
                }
                if sweep_repetitions == 0 {
                    return Err(Error::Config("sweep.repetitions must be at least 1".into()));
                }
                Some(SweepSpec { parameter, values, repetitions: sweep_repetitions })
            }
            (None, None) => None,
            _ => {
                return Err(Error::Config(
                    "sweep.parameter and sweep.values must appear together".into(),
                ))
            }
        };

        let cfg = RunConfig {
            dataset,
            arch,
            time_steps,
            epochs,
            seed,
            batch,
            lr: lr.unwrap_or_else(|| dataset.default_lr()),
            target_amplitude,
            tau_m,
            v_th,
            dt,
            s_max,
            surrogate_kind,
            alpha_h,
            alpha_w,
            data_dir,
            crop_pad: crop_pad.unwrap_or_else(|| dataset.default_crop_pad()),
            norm_mean: norm_mean.unwrap_or_else(|| dataset.default_norm().mean),
            norm_std: norm_std.unwrap_or_else(|| dataset.default_norm().std),
            out_dir,
            wall_clock,
            sweep,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Cross-field validation; construction of the typed sub-configs is
    /// the authority on each field's range.
    pub fn validate(&self) -> Result<()> {
        self.neuron_config()?;
        self.surrogate_spec()?;
        crate::training::TargetEncoding::new(self.target_amplitude, self.s_max)?;
        if self.time_steps == 0 {
            return Err(Error::Config("train.time_steps must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("train.batch must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("train.lr must be >= 0, got {}", self.lr)));
        }
        self.normalization().validate(self.dataset.shape().0)?;
        crate::arch::parse_arch(
            &self.arch,
            crate::arch::Shape::Chw(
                self.dataset.shape().0,
                self.dataset.shape().1,
                self.dataset.shape().2,
            ),
            self.dataset.classes(),
        )?;
        Ok(())
    }

    pub fn neuron_config(&self) -> Result<NeuronConfig> {
        NeuronConfig::new(self.tau_m, self.v_th, self.s_max, self.dt)
    }

    pub fn surrogate_spec(&self) -> Result<SurrogateSpec> {
        SurrogateSpec::new(self.surrogate_kind, self.alpha_h, self.alpha_w, self.s_max, self.v_th)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch: self.batch,
            epochs: self.epochs,
            seed: self.seed,
            target_amplitude: self.target_amplitude,
            time_steps: self.time_steps,
        }
    }

    pub fn normalization(&self) -> Normalization {
        Normalization { mean: self.norm_mean.clone(), std: self.norm_std.clone() }
    }

    /// Serializes the resolved configuration back to the flat format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("dataset", self.dataset.name().to_string());
        kv("arch", self.arch.clone());
        kv("train.time_steps", self.time_steps.to_string());
        kv("train.epochs", self.epochs.to_string());
        kv("train.seed", self.seed.to_string());
        kv("train.batch", self.batch.to_string());
        kv("train.lr", format!("{}", self.lr));
        kv("train.target_amplitude", format!("{}", self.target_amplitude));
        kv("neuron.tau_m", format!("{}", self.tau_m));
        kv("neuron.v_th", format!("{}", self.v_th));
        kv("neuron.dt", format!("{}", self.dt));
        kv("neuron.s_max", self.s_max.to_string());
        kv("surrogate.kind", self.surrogate_kind.name().to_string());
        kv("surrogate.alpha_h", format!("{}", self.alpha_h));
        kv("surrogate.alpha_w", format!("{}", self.alpha_w));
        kv("data.dir", self.data_dir.display().to_string());
        kv("data.crop_pad", self.crop_pad.to_string());
        kv(
            "data.norm_mean",
            self.norm_mean.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
        );
        kv(
            "data.norm_std",
            self.norm_std.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("out.dir", self.out_dir.display().to_string());
        kv("metrics.wall_clock", self.wall_clock.to_string());
        if let Some(sweep) = &self.sweep {
            kv("sweep.parameter", sweep.parameter.name().to_string());
            kv("sweep.values", sweep.values.join(","));
            kv("sweep.repetitions", sweep.repetitions.to_string());
        }
        out
    }

    /// Derives the per-cell config of a sweep: the swept parameter is
    /// substituted and dependent fields are kept consistent (the target
    /// amplitude is clamped into the valid range when s_max shrinks
    /// below it).
    pub fn sweep_cell(&self, param: SweepParam, value: &str) -> Result<RunConfig> {
        let mut cell = self.clone();
        cell.sweep = None;
        match param {
            SweepParam::SurrogateKind => cell.surrogate_kind = SurrogateKind::parse(value)?,
            SweepParam::AlphaW => cell.alpha_w = parse_num("sweep alpha_w", value)?,
            SweepParam::SMax => {
                cell.s_max = parse_num("sweep s_max", value)?;
                cell.target_amplitude = cell.target_amplitude.min(cell.s_max as f64);
            }
            SweepParam::TimeSteps => cell.time_steps = parse_num("sweep T", value)?,
        }
        cell.validate()?;
        Ok(cell)
    }
}
