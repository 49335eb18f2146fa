//! `osora`: decomposition, toy training, merging, parameter accounting and
//! invariant checks for SVD-initialized low-rank adapters.
//!
//! Exit codes: 0 success, 1 failed check or other error, 2 rank out of range
//! or unknown preset, 3 parse failure, 4 non-finite loss.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CountArgs, DecomposeArgs, TrainArgs};
use config::FileConfig;
use osora_core::Error;

#[derive(Debug, Parser)]
#[command(name = "osora", version, about = "SVD-initialized low-rank adapter laboratory")]
struct Cli {
    /// TOML run file with one table per command
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Truncated SVD of a matrix file
    Decompose {
        matrix: PathBuf,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write a full snapshot of the initial OSoRA state here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one adapter on a seeded toy task
    Train {
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        /// Rank of the teacher gap
        #[arg(long)]
        r_gap: Option<usize>,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// sgd or adam
        #[arg(long)]
        optimizer: Option<String>,
        /// ones or gaussian
        #[arg(long)]
        o_init: Option<String>,
        /// both, only_s or only_o
        #[arg(long)]
        trainable: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for loss_trace.csv, final.osra and w0.txt
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fold a checkpoint into its base weight
    Merge {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trainable-parameter sweep over a model-shape preset, as CSV
    Count {
        #[arg(long)]
        preset: Option<String>,
        /// Preset file replacing the bundled presets
        #[arg(long)]
        presets_file: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        method: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        rank: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run invariant suites; nonzero exit if any check fails
    Verify {
        /// svd, grad, merge, persist or all
        #[arg(long)]
        scope: Option<String>,
        /// perturb-u
        #[arg(long)]
        inject_fault: Option<String>,
    },
    /// Write a seeded Gaussian matrix in the text format
    GenMatrix {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(Error::RankOutOfRange { .. } | Error::UnknownPreset(_)) => 2,
            Failure::Core(Error::Parse(_)) => 3,
            Failure::Core(Error::NonFiniteLoss { .. }) => 4,
            _ => 1,
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Decompose { matrix, rank, seed, out } => {
            commands::decompose(DecomposeArgs { matrix, rank, seed, out }, &file)
        }
        Command::Train {
            d,
            k,
            r_gap,
            rank,
            method,
            steps,
            lr,
            optimizer,
            o_init,
            trainable,
            seed,
            out,
        } => commands::train_cmd(
            TrainArgs {
                d,
                k,
                r_gap,
                rank,
                method,
                steps,
                lr,
                optimizer,
                o_init,
                trainable,
                seed,
                out,
            },
            &file,
        ),
        Command::Merge { checkpoint, base, out } => commands::merge(&checkpoint, &base, &out),
        Command::Count {
            preset,
            presets_file,
            method,
            rank,
            out,
        } => commands::count(
            CountArgs {
                preset,
                presets_file,
                methods: method,
                ranks: rank,
                out,
            },
            &file,
        ),
        Command::Verify { scope, inject_fault } => commands::verify_cmd(scope, inject_fault, &file),
        Command::GenMatrix { rows, cols, seed, out } => commands::gen_matrix(rows, cols, seed, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !matches!(e, Failure::ChecksFailed(_)) {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
