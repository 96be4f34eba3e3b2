//! `fabr`: command-line surface for the random-feature ridge engine.
//!
//! Exit codes: 0 success, 2 usage errors, 3 data/format/memory errors,
//! 4 numeric errors.

mod commands;
mod model;

use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use fabr_core::error::Error;

#[derive(Parser)]
#[command(
    name = "fabr",
    version,
    about = "Random-feature ridge regression for whole shrinkage grids in one pass"
)]
struct Cli {
    /// BLAS worker threads (fixed count keeps outputs reproducible)
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Skip the first line of CSV inputs
    #[arg(long, global = true, action = ArgAction::SetTrue)]
    csv_skip_header: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic binary classification dataset (FABM files)
    Synth {
        /// Number of samples
        #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
        n: u64,
        /// Input dimension
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        d: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for features.fabm and labels.fabm
        #[arg(long)]
        out: std::path::PathBuf,
    },

    /// Fit a model over a shrinkage grid and write a model file
    Train {
        /// Training features (FABM or CSV)
        #[arg(long)]
        features: std::path::PathBuf,
        /// Training labels (Nx1 FABM or CSV of class indices)
        #[arg(long)]
        labels: std::path::PathBuf,
        /// Total random feature count P
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        p: u64,
        /// Feature block width P1
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        p1: u64,
        /// Comma-separated shrinkages, e.g. 1,100,10000 (sorted ascending)
        #[arg(long)]
        z: String,
        /// Master seed for feature generation
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// relu | tanh | identity | sign
        #[arg(long, default_value = "relu")]
        activation: String,
        #[arg(long, default_value_t = 1.0)]
        weight_scale: f64,
        /// Rank cap: use the sketch solver instead of the exact Gram
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        nu: Option<u64>,
        /// Mini-batch size: fit an ensemble of independent members
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        batch_size: Option<u64>,
        /// Regress demeaned one-hot targets (means re-added at prediction)
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        demean: bool,
        /// exact | annihilate: treatment of the null spectrum (exact solver)
        #[arg(long, default_value = "exact")]
        mode: String,
        /// Block counts at which to also solve the grid (recorded in the model header)
        #[arg(long)]
        checkpoints: Option<String>,
        /// Materialize P x K coefficients per shrinkage in the model file
        #[arg(long, action = ArgAction::SetTrue)]
        store_beta: bool,
        /// Number of classes (default: largest label + 1)
        #[arg(long)]
        classes: Option<usize>,
        /// Shuffle seed for ensemble batch assignment
        #[arg(long, default_value_t = 0)]
        shuffle_seed: u64,
        /// Output model path
        #[arg(long)]
        out: std::path::PathBuf,
    },

    /// Predict classes and per-shrinkage scores from a saved model
    Predict {
        #[arg(long)]
        model: std::path::PathBuf,
        /// Test features (FABM or CSV)
        #[arg(long)]
        test: std::path::PathBuf,
        /// Training features; required unless the model stores beta
        #[arg(long)]
        train: Option<std::path::PathBuf>,
        /// True labels for the test rows: prints per-shrinkage accuracy
        #[arg(long)]
        labels: Option<std::path::PathBuf>,
        /// Output CSV path
        #[arg(long)]
        out: std::path::PathBuf,
    },

    /// Expanding-complexity curve: accuracy per (checkpoint, shrinkage)
    Voc {
        #[arg(long)]
        train_features: std::path::PathBuf,
        #[arg(long)]
        train_labels: std::path::PathBuf,
        #[arg(long)]
        test_features: std::path::PathBuf,
        #[arg(long)]
        test_labels: std::path::PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        p: u64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        p1: u64,
        #[arg(long)]
        z: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "relu")]
        activation: String,
        #[arg(long, default_value_t = 1.0)]
        weight_scale: f64,
        /// Rank cap: drive the curve with the sketch solver
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        nu: Option<u64>,
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        demean: bool,
        #[arg(long, default_value = "exact")]
        mode: String,
        /// Block counts to evaluate; must include the final block count
        /// (default: every block)
        #[arg(long)]
        checkpoints: Option<String>,
        /// Record wall-clock ms per checkpoint (off by default so the CSV is
        /// byte-reproducible)
        #[arg(long, action = ArgAction::SetTrue)]
        timings: bool,
        #[arg(long)]
        out: std::path::PathBuf,
    },

    /// Time the multi-shrinkage engine against a per-shrinkage baseline
    Bench {
        /// Comma-separated input dimensions
        #[arg(long)]
        d: String,
        /// Comma-separated shrinkage-grid sizes
        #[arg(long)]
        num_z: String,
        /// Training rows (a quarter more are generated for the test split)
        #[arg(long, default_value_t = 4000, value_parser = clap::value_parser!(u64).range(2..))]
        n: u64,
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
        reps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Zero the measured columns so the CSV is byte-reproducible
        #[arg(long, action = ArgAction::SetTrue)]
        no_timings: bool,
        #[arg(long)]
        out: std::path::PathBuf,
    },

    /// Print a model file's header and payload shapes
    Inspect {
        #[arg(long)]
        model: std::path::PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    fabr_core::linalg::set_blas_threads(cli.threads);
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Numeric(_) => ExitCode::from(4),
                _ => ExitCode::from(3),
            }
        }
    }
}
