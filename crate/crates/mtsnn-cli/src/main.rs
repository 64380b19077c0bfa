//! Command-line interface: training runs, evaluation, parameter sweeps,
//! gradient checking, dataset fetching, and checkpoint inspection.
//!
//! Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric abort,
//! 5 gradcheck tolerance failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mtsnn::Error;

mod commands;
mod fetch;

#[derive(Parser)]
#[command(name = "mtsnn", version, about = "Multi-threshold spiking neural network engine")]
struct Cli {
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a network from a run config; writes metrics CSV, a final
    /// checkpoint, and a run manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split to evaluate: test or train.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Run a parameter sweep described by the config's sweep block.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Compare engine gradients against the scalar oracle on random
    /// tiny networks; nonzero exit above tolerance.
    Gradcheck {
        #[arg(long, default_value_t = 200)]
        cases: usize,
    },
    /// Download a dataset's standard files and verify their checksums.
    Fetch {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Manifest of url + sha256 lines; defaults to the built-in one.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Print a checkpoint header.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Shape(_) => 2,
        Error::Data(_) | Error::Io(_) => 3,
        Error::Numeric(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = cli.quiet;
    let result = match cli.cmd {
        Cmd::Train { config, seed, epochs, data_dir, out_dir } => {
            commands::train(&config, seed, epochs, data_dir, out_dir, quiet)
        }
        Cmd::Eval { checkpoint, split, data_dir } => {
            commands::eval(&checkpoint, &split, data_dir, quiet)
        }
        Cmd::Sweep { config, seed, epochs, data_dir, out_dir } => {
            commands::sweep(&config, seed, epochs, data_dir, out_dir, quiet)
        }
        Cmd::Gradcheck { cases } => {
            return match commands::gradcheck(cases, quiet) {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::from(5),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_code_for(&e))
                }
            };
        }
        Cmd::Fetch { dataset, data_dir, manifest } => {
            fetch::fetch(&dataset, data_dir, manifest.as_deref(), quiet)
        }
        Cmd::Inspect { checkpoint } => commands::inspect(&checkpoint),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
