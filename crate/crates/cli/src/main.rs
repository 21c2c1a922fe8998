use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lrcp_cli::{execute, load_config, Stage};

/// Latent-regional correlation profiling on a synthetic cohort.
#[derive(Parser)]
#[command(name = "lrcp", version)]
struct Args {
    /// key = value configuration file; defaults apply to omitted keys
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's global seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Rerun stages whose outputs are already current
    #[arg(long, global = true)]
    stage_force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write the phantom cohort: manifest, atlas and volumes
    Generate,
    /// Train one autoencoder per comparison
    Train,
    /// Project each latent layer with every method
    Embed,
    /// Component-region correlation tables with p-value and SAR filtering
    Correlate,
    /// Per-class forests on reconstruction error and their SHAP maps
    Shap,
    /// The LRCP grid, summary counts and accuracy maps
    Lrcp,
    /// Aggregate report directory
    Report,
    /// Every stage in order
    Run,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let stages: Vec<Stage> = match args.command {
        Command::Generate => vec![Stage::Generate],
        Command::Train => vec![Stage::Train],
        Command::Embed => vec![Stage::Embed],
        Command::Correlate => vec![Stage::Correlate],
        Command::Shap => vec![Stage::Shap],
        Command::Lrcp => vec![Stage::Lrcp],
        Command::Report => vec![Stage::Report],
        Command::Run => Stage::ALL.to_vec(),
    };
    let result = load_config(args.config.as_deref(), args.seed, args.out).and_then(|cfg| {
        execute(&cfg, &stages, args.stage_force, |s, ran| {
            eprintln!("{}: {}", s.name(), if ran { "done" } else { "up to date" });
        })
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
