//! `ssrgan` command-line driver.

mod commands;
mod error;
mod plot;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

/// Pixel-corruption inpainting with a semi-supervised SRGAN.
#[derive(Debug, Parser)]
#[command(name = "ssrgan", version)]
struct Cli {
    /// Log progress (or set RUST_LOG for finer control).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Resize and corrupt every image in a folder, writing PNGs and PGM masks.
    Corrupt(CorruptArgs),
    /// Train a model; writes metrics, checkpoints and a test-split evaluation.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split and emit one CSV row.
    Eval(EvalArgs),
    /// Reconstruct one corrupted image and write an original|corrupted|output strip.
    Infer(InferArgs),
    /// Train one model per corruption level and tabulate test NMSE.
    Sweep(SweepArgs),
    /// Merge run directories into NMSE-vs-level and NMSE-vs-epoch tables and plots.
    Report(ReportArgs),
    /// Compare analytic and finite-difference gradients for every layer and a tiny model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    /// Folder of .png/.ppm images, searched recursively.
    #[arg(long)]
    pub input: PathBuf,
    /// Output folder; mirrors the input layout.
    #[arg(long)]
    pub output: PathBuf,
    /// Fraction of pixel sites to blank, in [0, 1].
    #[arg(long)]
    pub level: f64,
    /// Base seed; image i uses seed XOR i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Side length images are resized to.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON training configuration; defaults apply to missing fields.
    #[arg(long, conflicts_with = "resume")]
    pub config: Option<PathBuf>,
    /// Continue from a checkpoint instead of starting fresh.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, conflicts_with = "resume")]
    pub seed: Option<u64>,
    /// Overrides the configured number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate; its configuration selects the dataset.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split to score.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Corruption level; defaults to the level the model was trained at.
    #[arg(long)]
    pub level: Option<f64>,
    /// Seed for the per-image masks; defaults to the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the CSV (header and row) to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Image to corrupt and reconstruct; resized to the model's training size.
    #[arg(long)]
    pub image: PathBuf,
    /// Fraction of pixel sites to blank, in [0, 1].
    #[arg(long)]
    pub level: f64,
    /// Mask seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output PNG: original, corrupted and reconstructed side by side.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// JSON training configuration shared by every level.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated corruption levels.
    #[arg(long, value_delimiter = ',', default_value = "0.3,0.4,0.5,0.6,0.7,0.8")]
    pub levels: Vec<f64>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Parent directory for the per-level runs; defaults to the configured output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A run directory, or a directory whose subdirectories are runs.
    #[arg(long)]
    pub runs: PathBuf,
    /// Destination for the merged CSVs and plots.
    #[arg(long)]
    pub out: PathBuf,
    /// Accepted for uniformity; reporting draws no random numbers.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip the PNG plots.
    #[arg(long)]
    pub no_plots: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seed of the first instance; instance i uses seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random instances per check.
    #[arg(long, default_value_t = 5)]
    pub instances: u64,
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Corrupt(a) => commands::corrupt(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Report(a) => report::report(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let err = CliError::usage(first.trim_start_matches("error: "));
            eprintln!("{err}");
            return ExitCode::from(err.code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.code)
        }
    }
}
