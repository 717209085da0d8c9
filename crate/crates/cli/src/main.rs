use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedsim_cli::commands::{cmd_compare, cmd_partition, cmd_trace, cmd_train};
use fedsim_cli::config::RunConfig;
use fedsim_cli::CliError;

/// Deterministic federated-learning simulator.
#[derive(Parser)]
#[command(name = "fedsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration (or a run-manifest.json from a previous run).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Byte-reproducible outputs (elapsed time reported as zero).
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a Dirichlet non-IID partition and write its manifest.
    Partition(RunArgs),
    /// Run a federation end to end and persist metrics and checkpoints.
    Train(RunArgs),
    /// Record one client's per-epoch divergence from the global model.
    Trace(RunArgs),
    /// Summarize finished run directories (mean/std of final accuracy).
    Compare {
        /// Completed run directories.
        run_dirs: Vec<PathBuf>,
        /// Where to write compare.json (table always prints to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(args: &RunArgs) -> Result<RunConfig, CliError> {
    Ok(RunConfig::load(&args.config)?.with_overrides(
        args.seed,
        args.deterministic,
        args.out.clone(),
    ))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Partition(args) => {
            let out = cmd_partition(&load(&args)?)?;
            eprintln!("partition written to {}", out.display());
        }
        Command::Train(args) => {
            let out = cmd_train(&load(&args)?)?;
            eprintln!("run directory: {}", out.display());
        }
        Command::Trace(args) => {
            let out = cmd_trace(&load(&args)?)?;
            eprintln!("trace written to {}", out.display());
        }
        Command::Compare { run_dirs, out } => {
            let table = cmd_compare(&run_dirs, out.as_deref())?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
