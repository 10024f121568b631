use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use harnack_lab::{run, Command, RunOptions};

#[derive(Parser)]
#[command(name = "harnack-lab", version, about = "Gradient-estimate and Harnack experiments under Ricci flow")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; HARNACK_LAB_OUT takes precedence.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 or unset: one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Tolerance override for every check.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Seed for randomized initial data.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample the admissibility conditions of each configured triple.
    CheckConditions,
    /// Solve the configured equation and dump the field.
    Solve,
    /// Check the selected gradient estimates on a solved field.
    Verify,
    /// Check the Harnack inequality on an endpoint grid.
    Harnack,
    /// Run a parameter sweep.
    Sweep,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(config) = cli.config else {
        eprintln!("error: --config is required");
        return ExitCode::from(2);
    };
    let command = match cli.command {
        Cmd::CheckConditions => Command::CheckConditions,
        Cmd::Solve => Command::Solve,
        Cmd::Verify => Command::Verify,
        Cmd::Harnack => Command::Harnack,
        Cmd::Sweep => Command::Sweep,
    };
    let opts = RunOptions {
        config,
        out: cli.out,
        jobs: cli.jobs,
        tol: cli.tol,
        seed: cli.seed,
    };
    ExitCode::from(run(command, &opts) as u8)
}
