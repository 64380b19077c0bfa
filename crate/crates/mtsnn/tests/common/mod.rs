//! Shared helpers for the integration suites.

use std::path::PathBuf;

use mtsnn::config::RunConfig;
use mtsnn::data::Split;
use mtsnn::training::Trainer;
use mtsnn::{Real, Result};

/// Dataset root: `MTSNN_DATA_DIR` or the workspace-level `data/`.
pub fn data_dir() -> PathBuf {
    if let Ok(dir) = std::env::var("MTSNN_DATA_DIR") {
        return PathBuf::from(dir);
    }
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// First `n` samples of a split.
pub fn subset_split(split: &Split, n: usize) -> Split {
    let n = n.min(split.len());
    let (c, h, w) = split.meta.shape;
    let pixel = c * h * w;
    let mut meta = split.meta.clone();
    meta.count = n;
    Split {
        meta,
        images: split.images[..n * pixel].to_vec(),
        labels: split.labels[..n].to_vec(),
    }
}

pub fn trainer_from_config<F: Real>(cfg: &RunConfig) -> Result<Trainer<F>> {
    Trainer::from_run_config(cfg)
}
