//! `lfd`: generate demonstrations, learn and certify a controller, and simulate it.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "lfd", version, about = "Learn stabilizing controllers from expert demonstrations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir` in the configuration).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent simulations.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Continue past a failed certificate.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Record expert demonstrations and check their affine independence.
    Demos(Common),
    /// Learn a controller from recorded demonstrations and certify it.
    Learn(Common),
    /// Recompute the certificate of a stored controller.
    Certify(Common),
    /// Simulate the learned closed loop.
    Simulate(Common),
    /// Track the figure-eight reference.
    Track(Common),
    /// Run every stage in order.
    All(Common),
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation(String),
    Certification(String),
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Certification(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
            CliError::Certification(m) => write!(f, "certification failed: {m}"),
            CliError::Divergence(m) => write!(f, "simulation diverged: {m}"),
        }
    }
}

impl From<lfd_core::Error> for CliError {
    fn from(e: lfd_core::Error) -> Self {
        use lfd_core::Error;
        match e {
            Error::Divergence { .. } | Error::DomainExit { .. } => CliError::Divergence(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (common, stage) = match &cli.command {
        Command::Demos(c) => (c, commands::Stage::Demos),
        Command::Learn(c) => (c, commands::Stage::Learn),
        Command::Certify(c) => (c, commands::Stage::Certify),
        Command::Simulate(c) => (c, commands::Stage::Simulate),
        Command::Track(c) => (c, commands::Stage::Track),
        Command::All(c) => (c, commands::Stage::All),
    };
    if common.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let config = RunConfig::load(&common.config)?;
    let resolved = config.resolve(common.out.as_deref())?;
    let ctx = commands::Context {
        cfg: resolved,
        jobs: common.jobs,
        force: common.force,
    };
    commands::run(&ctx, stage)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lfd: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
