//! Command-line front end: dataset generation, meta-training, pretraining,
//! per-task optimization, benchmarking, profiles and rendering.
//!
//! Every run resolves a full [`RunConfig`] (config file, then environment,
//! then flags) and writes a manifest next to its outputs; `metatopo replay
//! <manifest>` reproduces the artifacts bit-identically.

mod commands;
mod manifest;

use anyhow::Context;
use clap::{Parser, Subcommand};
use metatopo::config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "METATOPO_OUT";

#[derive(Parser, Debug)]
#[command(name = "metatopo", version, about = "Meta-learned initializations for neural topology optimization")]
struct Cli {
    /// TOML config file; command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides config and METATOPO_OUT).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Root seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel sections (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a validated task dataset.
    GenTasks(commands::GenTasksArgs),
    /// Reptile meta-training over a task dataset.
    MetaTrain(commands::MetaTrainArgs),
    /// Strain-energy identity pretraining.
    Pretrain(commands::PretrainArgs),
    /// Optimize one task from a dataset.
    Optimize(commands::OptimizeArgs),
    /// Run a benchmark over a dataset (resumable).
    Bench(commands::BenchArgs),
    /// Performance profiles from a results table.
    Profile(commands::ProfileArgs),
    /// Render a density field as a PGM image.
    Render(commands::RenderArgs),
    /// Re-run a command from its manifest.
    Replay { manifest: PathBuf },
}

/// Exit codes: 2 config/usage, 3 generation stall, 4 runtime failure.
fn classify(err: &anyhow::Error) -> u8 {
    use metatopo::taskgen::TaskGenError;
    for cause in err.chain() {
        if cause.downcast_ref::<TaskGenError>().is_some() {
            return 3;
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
    }
    4
}

/// Configuration/usage error (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| ConfigError(format!("cannot read config {}", path.display())))?;
            RunConfig::from_toml(&text)
                .map_err(|e| anyhow::Error::new(ConfigError(format!("bad config: {e}"))))?
        }
        None => RunConfig::default(),
    };
    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        cfg.output_dir = dir;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.output_dir = dir.display().to_string();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = resolve_config(&cli)?;
    if config.jobs > 0 {
        // ignore failures: the global pool may already exist
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build_global();
    }
    match cli.command {
        Command::GenTasks(args) => commands::gen_tasks(&config, &args),
        Command::MetaTrain(args) => commands::meta_train(&config, &args),
        Command::Pretrain(args) => commands::pretrain(&config, &args),
        Command::Optimize(args) => commands::optimize(&config, &args),
        Command::Bench(args) => commands::bench(&config, &args),
        Command::Profile(args) => commands::profile(&config, &args),
        Command::Render(args) => commands::render(&config, &args),
        Command::Replay { manifest } => commands::replay(&manifest),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}
