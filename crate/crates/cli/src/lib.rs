//! Configuration-driven experiment runner for `levy-parametrix`.
//!
//! A TOML file describes the coordinate laws, coefficient field, meshes and
//! tolerances; each subcommand writes CSV tables plus a `manifest.json` into
//! the output directory.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;

use std::path::Path;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use experiment::Experiment;
pub use output::Output;

/// The subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Validate,
    Density,
    Kernel,
    Semigroup,
    McCompare,
    HolderScan,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Density => "density",
            Command::Kernel => "kernel",
            Command::Semigroup => "semigroup",
            Command::McCompare => "mc-compare",
            Command::HolderScan => "holder-scan",
        }
    }
}

/// Runs one subcommand, writing its tables and the manifest into `out_dir`.
/// Failed checks are reported as [`HarnessError::Validation`] after the
/// files are written.
pub fn run(command: Command, exp: &Experiment, config_text: &str, out_dir: &Path) -> Result<()> {
    let mut out = Output::create(out_dir)?;
    let ok = match command {
        Command::Validate => commands::validate(exp, &mut out)?,
        Command::Density => commands::density(exp, &mut out)?,
        Command::Kernel => commands::kernel(exp, &mut out)?,
        Command::Semigroup => commands::semigroup(exp, &mut out)?,
        Command::McCompare => commands::mc_compare(exp, &mut out)?,
        Command::HolderScan => commands::holder_scan(exp, &mut out)?,
    };
    out.write_manifest(command.name(), config_text, exp.config.seed)?;
    if ok {
        Ok(())
    } else {
        Err(HarnessError::Validation(format!("{} checks failed; see {}", command.name(), out_dir.display())))
    }
}
