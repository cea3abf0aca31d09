use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use splitnn::config::ExperimentConfig;
use splitnn::experiment;
use splitnn::report::compare_dir;

#[derive(Parser)]
#[command(name = "splitnn", version, about = "Split-learning experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving per-run artifact folders.
    #[arg(long, global = true, env = "SPLITNN_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    /// Overrides the config transport.
    #[arg(long, global = true, value_enum)]
    transport: Option<TransportArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured experiment and write its artifacts.
    Run { config: PathBuf },
    /// Check a config and print the resolved partition plan.
    Validate { config: PathBuf },
    /// Build curves.csv and the comparison table for every run under a directory.
    Compare { dir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Inprocess,
    Tcp,
}

fn load(cli: &Cli, path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = Some(dir.clone());
    }
    match cli.transport {
        Some(TransportArg::Inprocess) => cfg.transport.kind = "inprocess".into(),
        Some(TransportArg::Tcp) => cfg.transport.kind = "tcp".into(),
        None => {}
    }
    Ok(cfg)
}

fn base_dir(config: &Path) -> PathBuf {
    config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = load(cli, config)?;
            let out = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs"));
            let outcome = experiment::run(&cfg, &base_dir(config), &out)
                .with_context(|| format!("run {} failed", cfg.run_name()))?;
            println!(
                "{}: accuracy {:.4} after {} epochs, artifacts in {}",
                outcome.info.name,
                outcome.final_eval.accuracy(),
                outcome.info.epochs,
                outcome.dir.display()
            );
        }
        Command::Validate { config } => {
            let cfg = load(cli, config)?;
            let resolved = cfg.resolve()?;
            let data = experiment::load_dataset(&cfg, &base_dir(config))?;
            let shards = experiment::partition(&cfg, &resolved, &data)?;
            println!("{}: ok ({} samples, {} shards)", resolved.name, data.len(), shards.len());
            if let Some(plan) = &resolved.plan {
                print!("{plan}");
            }
        }
        Command::Compare { dir } => {
            if !dir.is_dir() {
                bail!("{} is not a directory", dir.display());
            }
            print!("{}", compare_dir(dir)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
