use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use pair_cli::{commands, RunConfig};

#[derive(Parser)]
#[command(
    name = "pair",
    version,
    about = "Partially-shared scalar-on-image regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Sequential summation and single-threaded fits.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate train/val/test bundles and the true parameters.
    Simulate,
    /// Fit the configured method on the train/val bundles.
    Fit,
    /// Fit PAIR over the configured grid.
    GridSearch,
    /// Score a fit file on the test bundle.
    Evaluate,
    /// Repeat simulate + fit + evaluate and tabulate mean (sd).
    Replicate,
    /// Write coefficient images of a fit file as 16-bit PGM.
    ExportHeatmap,
}

fn run(cli: Cli) -> Result<()> {
    let path = cli.config.context("--config is required")?;
    let mut cfg = RunConfig::load(&path)?;
    cfg.finalize(cli.seed, cli.jobs, cli.deterministic, cli.out)?;
    let jobs = if cfg.deterministic { 1 } else { cfg.jobs };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("starting worker pool")?;
    pool.install(|| match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Fit => commands::fit(&cfg),
        Command::GridSearch => commands::grid_search(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Replicate => commands::replicate(&cfg),
        Command::ExportHeatmap => commands::export_heatmap(&cfg),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
