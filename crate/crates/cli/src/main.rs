//! `plfm`: dataset generation and splitting, per-branch training, fused
//! inference, evaluation and reporting.

mod dataset;
mod error;
mod evaluate;
mod infer;
mod report;
mod train;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use plfm::config::{Overrides, RunConfig};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "plfm",
    version,
    about = "Cloud removal by fusing optical time series with SAR"
)]
struct Cli {
    /// TOML run configuration; flags given here take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Square image side in pixels.
    #[arg(long, global = true)]
    size: Option<usize>,
    /// Intensity classes of the fusion head.
    #[arg(long, global = true)]
    classes: Option<usize>,
    /// Shift-compensation search radius used by `evaluate`.
    #[arg(long, global = true)]
    csc_radius: Option<usize>,
    /// Report spectral angles in degrees.
    #[arg(long, global = true)]
    degrees: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate, split or index a corpus.
    Dataset {
        #[command(subcommand)]
        command: dataset::DatasetCommand,
    },
    /// Train one branch.
    Train(train::TrainArgs),
    /// Run the fused model.
    Infer(infer::InferArgs),
    /// Score predictions against ground truth.
    Evaluate(evaluate::EvaluateArgs),
    /// Tables and plots from a metrics table and training logs.
    Report(report::ReportArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let max_epochs = match &cli.command {
        Command::Train(t) => t.max_epochs,
        _ => None,
    };
    let overrides = Overrides {
        seed: cli.seed,
        size: cli.size,
        classes: cli.classes,
        csc_radius: cli.csc_radius,
        degrees: cli.degrees,
        max_epochs,
    };
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides)?;
    log::info!("seed {}", cfg.seed);
    match cli.command {
        Command::Dataset { command } => dataset::run(command, &cfg),
        Command::Train(args) => train::run(args, &cfg),
        Command::Infer(args) => infer::run(args, &cfg),
        Command::Evaluate(args) => evaluate::run(args, &cfg),
        Command::Report(args) => report::run(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = write!(std::io::stdout(), "{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            return CliError::Usage(first.trim_start_matches("error: ").to_string()).report();
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
