use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use lpx_harness::{run, Command, Experiment, ExperimentConfig, HarnessError, Result};

/// Parametrix experiments for SDEs driven by cylindrical Lévy noise.
#[derive(Debug, Parser)]
#[command(name = "lpx", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Experiment configuration; the built-in desk case when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Monte Carlo seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Quadrature tolerance (overrides `tolerances.rtol`).
    #[arg(long)]
    rtol: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lpx: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::Config(format!("--threads: {e}")))?;
    }
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| HarnessError::Io(format!("{}: {e}", p.display())))?,
        None => lpx_harness::config::DEFAULT_CONFIG.to_string(),
    };
    let mut config = ExperimentConfig::from_toml(&text).map_err(|e| match (&cli.config, e) {
        (Some(p), HarnessError::Config(m)) => HarnessError::Config(format!("{}: {m}", p.display())),
        (_, e) => e,
    })?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(r) = cli.rtol {
        config.tolerances.rtol = r;
    }
    let out = cli.out.clone().unwrap_or_else(|| config.output_dir.clone());
    let exp = Experiment::new(config)?;
    run(cli.command, &exp, &text, &out)
}
