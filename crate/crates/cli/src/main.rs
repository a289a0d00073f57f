use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;

use commands::Overrides;

type Run = fn(&std::path::Path, &Overrides) -> Result<(), error::CliError>;

#[derive(Parser)]
#[command(name = "netgen", version, about = "Learnable-graph classification of multivariate time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted synthetic dataset directory.
    Synth(Args),
    /// Train one model and write checkpoint, history and metrics.
    Train(Args),
    /// Compare the six pipelines over the configured seeds.
    Compare(Args),
    /// Regularizer ablation table.
    Ablate(Args),
    /// Grid over encoder window and embedding size.
    Sweep(Args),
    /// Mean graphs, significant edges and module scores from a checkpoint.
    Interpret(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory, overriding `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint for `interpret`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (args, run): (&Args, Run) = match &cli.command {
        Command::Synth(a) => (a, commands::synth),
        Command::Train(a) => (a, commands::train),
        Command::Compare(a) => (a, commands::compare_cmd),
        Command::Ablate(a) => (a, commands::ablate_cmd),
        Command::Sweep(a) => (a, commands::sweep_cmd),
        Command::Interpret(a) => (a, commands::interpret_cmd),
    };
    let ov = Overrides {
        seed: args.seed,
        epochs: args.epochs,
        out: args.out.clone(),
        checkpoint: args.checkpoint.clone(),
    };
    match run(&args.config, &ov) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
