use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sphere_consensus::experiments::{execute, Command, ExperimentConfig, Overrides};

/// Seeded experiments for projected consensus on unit spheres.
#[derive(Parser)]
#[command(name = "spherecons", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Weight iteration from random starts; reports the consensus fraction.
    Sweep(Flags),
    /// Rank distribution of descent limits for symmetric weights.
    RankTable(Flags),
    /// Descent with non-symmetric weights; counts limits of rank >= 2.
    Theorem2(Flags),
    /// Five-agent ring fixed point and its spectrum.
    Pentagon(Flags),
    /// Instability certificates at descent-found fixed points.
    Audit(Flags),
    /// Rank of the fixed-point residual Jacobian.
    JgRank(Flags),
}

#[derive(Args)]
struct Flags {
    /// JSON file with config fields; flags below take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (required except for `pentagon`).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    slack: Option<f64>,
    /// Output directory for records.csv and summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    symmetric: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, flags) = match cli.command {
        Cmd::Sweep(f) => (Command::Sweep, f),
        Cmd::RankTable(f) => (Command::RankTable, f),
        Cmd::Theorem2(f) => (Command::Theorem2, f),
        Cmd::Pentagon(f) => (Command::Pentagon, f),
        Cmd::Audit(f) => (Command::Audit, f),
        Cmd::JgRank(f) => (Command::JgRank, f),
    };
    match run(command, flags) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command, f: Flags) -> sphere_consensus::Result<()> {
    let mut cfg = match &f.config {
        Some(path) => ExperimentConfig::load(command, path)?,
        None => ExperimentConfig::defaults(command),
    };
    cfg.apply(&Overrides {
        seed: f.seed,
        trials: f.trials,
        n: f.n,
        d: f.d,
        margin: f.margin,
        slack: f.slack,
        out: f.out,
        symmetric: f.symmetric,
    });
    cfg.validate()?;
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("results").join(command.name()));
    let summary = execute(&cfg, &dir)?;
    println!("{}", serde_json::to_string_pretty(&summary["report"])?);
    eprintln!("wrote {}", dir.display());
    Ok(())
}
