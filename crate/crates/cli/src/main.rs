//! `paratox` — operator CLI for the dual-head toxic-speech training
//! framework. One invocation owns the workspace via a lock file.

mod commands;
mod lock;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub const EXIT_OK: u8 = 0;
pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

/// Failures carry their exit code; usage errors come from clap directly.
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn report(&self) -> u8 {
        match self {
            CliError::Validation(msg) => {
                eprintln!("validation error: {msg}");
                EXIT_VALIDATION
            }
            CliError::Runtime(msg) => {
                eprintln!("error: {msg}");
                EXIT_RUNTIME
            }
        }
    }
}

#[derive(Parser)]
#[command(name = "paratox", version, about = "Dual-head toxic-speech training framework")]
struct Cli {
    /// Workspace root; defaults to $PARATOX_WORKSPACE, then the current
    /// directory. Relative flag paths resolve against it.
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a manifest, printing summary counts.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Stratified train/dev/test split of a manifest.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated train,dev,test ratios.
        #[arg(long, default_value = "0.7,0.1,0.2")]
        ratios: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "split.json")]
        out: PathBuf,
    },
    /// Derive a stage training dataset from a split.
    Stages {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// S1, S2, or S3.
        #[arg(long)]
        stage: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the stage's default Safe fraction.
        #[arg(long)]
        safe_fraction: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ingest text features (one line: id then d floats) into a TXAF store.
    /// Repeated ids are treated as frames of one sample and mean-pooled.
    Pool {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "features.txaf")]
        out: PathBuf,
        /// Extractor tag recorded in the store header.
        #[arg(long, default_value = "wav2vec2-large-960h")]
        tag: String,
        /// Report id alignment against this manifest.
        #[arg(long)]
        align_manifest: Option<PathBuf>,
    },
    /// Run the configured training protocol.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on a split and write a metrics CSV.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// train, dev, or test.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every head gradient.
    Gradcheck {
        #[arg(long, default_value_t = 12)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// full or binary.
        #[arg(long, default_value = "full")]
        mode: String,
    },
    /// Dataset-curation utilities.
    Curate {
        #[command(subcommand)]
        action: CurateAction,
    },
    /// Render a metrics CSV as a table, or collect training logs into a
    /// plot-ready loss-curve CSV.
    Report {
        /// A metrics CSV produced by `eval`.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// A run output directory containing stage_*.jsonl logs.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CurateAction {
    /// Cohen's kappa between two files with one label per line.
    Kappa {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// K-means over text-format embedding vectors, emitting a cluster CSV.
    Kmeans {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not usage errors.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let workspace = cli
        .workspace
        .or_else(|| std::env::var_os("PARATOX_WORKSPACE").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));

    let _lock = match lock::WorkspaceLock::acquire(&workspace) {
        Ok(lock) => lock,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };

    match commands::run(&workspace, cli.command) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => ExitCode::from(e.report()),
    }
}
