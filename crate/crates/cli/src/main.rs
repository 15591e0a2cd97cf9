use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::ExperimentConfig;

#[derive(Debug)]
pub enum CmdError {
    /// Bad input; exit code 2.
    Config(String),
    /// A numerical check or computation failed; exit code 1.
    Numeric(String),
    Io(String),
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CmdError::Config(m) => write!(f, "configuration error: {m}"),
            CmdError::Numeric(m) => write!(f, "numerical failure: {m}"),
            CmdError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "cmcloop", version, about = "Delaunay-end CMC surfaces from loop-group data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Directory for the mesh, CSV and report outputs.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    threads: Option<usize>,
    /// Recorded in the report. The computations are deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form Delaunay surface mesh and τ samples.
    Delaunay(Common),
    /// Frame convergence, end asymptotics and growth checks for a perturbed potential.
    Verify(Common),
    /// Dressed surface mesh, with an optional extraction round trip.
    Dress(Common),
}

fn run(cli: Cli) -> Result<bool, CmdError> {
    let (Command::Delaunay(c) | Command::Verify(c) | Command::Dress(c)) = &cli.command;
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CmdError::Config(e.to_string()))?;
    }
    let cfg = ExperimentConfig::load(&c.config)?;
    std::fs::create_dir_all(&c.out_dir).map_err(|e| CmdError::Io(format!("{}: {e}", c.out_dir.display())))?;
    match &cli.command {
        Command::Delaunay(c) => commands::cmd_delaunay(&cfg, &c.out_dir, c.seed),
        Command::Verify(c) => commands::cmd_verify(&cfg, &c.out_dir, c.seed),
        Command::Dress(c) => commands::cmd_dress(&cfg, &c.out_dir, c.seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed; see the report");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{e}");
            match e {
                CmdError::Config(_) => ExitCode::from(2),
                CmdError::Numeric(_) | CmdError::Io(_) => ExitCode::from(1),
            }
        }
    }
}
