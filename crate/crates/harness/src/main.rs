use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nonlocal_harness::error::exit;
use nonlocal_harness::stages::{run_all, run_stage};
use nonlocal_harness::{Config, Context, HarnessError, Stage};

#[derive(Parser)]
#[command(
    name = "nonlocal-lab",
    version,
    about = "Long-time behaviour of nonlocal diffusion with absorption"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML)
    #[arg(long, global = true, default_value = "lab.toml")]
    config: PathBuf,

    /// Artifact directory
    #[arg(long, global = true, default_value = "artifacts")]
    out: PathBuf,

    /// Continue an interrupted run from its last checkpoint
    #[arg(long, global = true)]
    resume: bool,

    /// Worker threads (defaults to all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Eigenvalue sweep, scaling law and eigenfunction convergence
    Eigen,
    /// Time integration with checkpoints and positivity diagnostics
    Evolve,
    /// Subsolution checks and the phi table
    Barrier,
    /// Gradient decay of the fundamental solution remainder
    Fundamental,
    /// Long-time profile report from stored checkpoints
    Verify,
    /// Plot data from the stage outputs
    Report,
    /// All stages in order
    Run,
}

fn execute(cli: &Cli) -> Result<(), HarnessError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::ThreadPool(e.to_string()))?;
    }
    let cfg = Config::from_path(&cli.config)?;
    if !cfg.subcritical {
        eprintln!(
            "warning: the initial datum does not satisfy |x|^(2/(p-1)) u0 -> infinity; the flat limit is not expected"
        );
    }
    let ctx = Context::new(cfg, &cli.out)?;
    let stage = match cli.command {
        Command::Run => return run_all(&ctx, cli.resume, |line| println!("{line}")),
        Command::Eigen => Stage::Eigen,
        Command::Evolve => Stage::Evolve,
        Command::Barrier => Stage::Barrier,
        Command::Fundamental => Stage::Fundamental,
        Command::Verify => Stage::Verify,
        Command::Report => Stage::Report,
    };
    if cli.resume {
        ctx.check_resumable()?;
    }
    let summary = run_stage(&ctx, stage, cli.resume)?;
    println!("{}: {summary}", stage.name());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::from(exit::SUCCESS as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
