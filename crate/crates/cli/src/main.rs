mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;

/// Environment variable holding the worker thread count.
const THREADS_VAR: &str = "STAPDE_THREADS";

#[derive(Parser)]
#[command(name = "stapde", version, about = "Clifford and spacetime-algebra ResNets on FDTD Maxwell data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories and write the dataset manifest
    Gen(ConfigArgs),
    /// Train a model and keep the best validation checkpoint
    Train(ConfigArgs),
    /// Single-step metrics on the test splits
    Eval(ConfigArgs),
    /// Autoregressive rollout metrics and predicted frames
    Rollout(ConfigArgs),
    /// F² maps and loss tables as text grids
    Export(ConfigArgs),
    /// Algebra oracle, STA identities and gradient checks
    Selftest,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML)
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config key, e.g. --set train.epochs=5
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::load(&self.config, &self.overrides)
    }
}

fn threads() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => {
            let n: usize = v
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| stapde::Error::Config(format!("{THREADS_VAR}={v} is not a positive integer")))?;
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring the thread pool")?;
            Ok(n)
        }
        Err(_) => Ok(rayon::current_num_threads()),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let threads = threads()?;
    match cli.command {
        Command::Gen(a) => commands::gen(&a.load()?, threads)?,
        Command::Train(a) => commands::train_cmd(&a.load()?)?,
        Command::Eval(a) => commands::eval(&a.load()?)?,
        Command::Rollout(a) => commands::rollout(&a.load()?)?,
        Command::Export(a) => commands::export(&a.load()?)?,
        Command::Selftest => {
            if !commands::selftest()? {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// 2 config or usage, 3 numerical blowup, 4 I/O or corrupt file.
fn exit_code(e: &anyhow::Error) -> u8 {
    use stapde::Error as E;
    if let Some(err) = e.downcast_ref::<E>() {
        return match err {
            E::Config(_) | E::Usage(_) | E::Parse(_) => 2,
            E::Blowup { .. } => 3,
            E::Format(_) | E::Io(_) => 4,
        };
    }
    if e.chain().any(|c| c.is::<std::io::Error>()) {
        4
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
