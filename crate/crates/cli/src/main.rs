use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use groundfail_svi::commands::{cmd_evaluate, cmd_export, cmd_infer, cmd_simulate};
use groundfail_svi::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "groundfail-svi", version, about = "Variational updating of ground-failure maps with damage proxy maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `paths.out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `hyper.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic event from the priors and true weights.
    Simulate(Common),
    /// Fit posteriors to a damage proxy map.
    Infer(Common),
    /// Score prior and posterior maps against ground truth.
    Evaluate(Common),
    /// Write plot data for the posterior maps.
    Export(Common),
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("GFSVI_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("GFSVI_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let (Command::Simulate(c) | Command::Infer(c) | Command::Evaluate(c) | Command::Export(c)) = &cli.command;
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(out) = &c.out {
        cfg.paths.out_dir = out.clone();
    }
    if let Some(seed) = c.seed {
        cfg.hyper.seed = seed;
    }
    match cli.command {
        Command::Simulate(_) => cmd_simulate(&cfg),
        Command::Infer(_) => cmd_infer(&cfg),
        Command::Evaluate(_) => cmd_evaluate(&cfg).map(|_| ()),
        Command::Export(_) => cmd_export(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
