//! Metrics CSV sink: one row per epoch.
//!
//! Numeric formatting is fixed-width decimal so repeated seeded runs
//! produce byte-identical files (wall-clock time is the one column that
//! cannot be reproducible; runs configured with `metrics.wall_clock =
//! false` write zero there and the whole file becomes bit-stable).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::Result;

pub const CSV_HEADER: &str = "epoch,train_loss,train_acc,test_acc,wall_seconds";

pub struct MetricsWriter {
    out: BufWriter<File>,
    wall_clock: bool,
}

impl MetricsWriter {
    pub fn create(path: &Path, wall_clock: bool) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{CSV_HEADER}")?;
        Ok(MetricsWriter { out, wall_clock })
    }

    pub fn row(
        &mut self,
        epoch: usize,
        train_loss: f64,
        train_acc: f64,
        test_acc: f64,
        wall_seconds: f64,
    ) -> Result<()> {
        let wall = if self.wall_clock { wall_seconds } else { 0.0 };
        writeln!(
            self.out,
            "{epoch},{train_loss:.6},{train_acc:.4},{test_acc:.4},{wall:.3}"
        )?;
        self.out.flush()?;
        Ok(())
    }
}

/// Long-form sweep CSV: one row per (cell, repetition, epoch).
pub struct SweepWriter {
    out: BufWriter<File>,
}

impl SweepWriter {
    pub fn create(path: &Path, parameter: &str) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "parameter,value,repetition,epoch,train_loss,train_acc,test_acc")?;
        let _ = parameter;
        Ok(SweepWriter { out })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn row(
        &mut self,
        parameter: &str,
        value: &str,
        repetition: usize,
        epoch: usize,
        train_loss: f64,
        train_acc: f64,
        test_acc: f64,
    ) -> Result<()> {
        writeln!(
            self.out,
            "{parameter},{value},{repetition},{epoch},{train_loss:.6},{train_acc:.4},{test_acc:.4}"
        )?;
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_format_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        {
            let mut w = MetricsWriter::create(&path, false).unwrap();
            w.row(1, 1.0 / 3.0, 0.5, 0.25, 123.456).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "epoch,train_loss,train_acc,test_acc,wall_seconds\n1,0.333333,0.5000,0.2500,0.000\n"
        );
    }

    #[test]
    fn wall_clock_column_present_when_enabled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        {
            let mut w = MetricsWriter::create(&path, true).unwrap();
            w.row(0, 0.0, 1.0, 1.0, 2.5).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.ends_with("0,0.000000,1.0000,1.0000,2.500\n"), "{text}");
    }
}
