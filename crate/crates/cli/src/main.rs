//! `wgflow`: reproduces the forward-Euler counter-examples and writes their
//! data, diagnostics and plot scripts.
//!
//! Exit codes: 0 when the outcome matches the expected reproduction, 1 on
//! a numerical or input failure (including bad arguments), 2 when a
//! reproduction check fails.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ConfigFile;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] wgflow::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// How a run compares with the expected reproduction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Consistent,
    Inconsistent,
}

impl Outcome {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Outcome::Consistent
        } else {
            Outcome::Inconsistent
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "wgflow", version, about = "Forward-Euler Wasserstein gradient flow counter-examples")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of grid points for curves and densities.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// TOML file of `key = value` settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Continue past a regularity halt (results are marked non-conforming).
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Quartic target from a Gaussian start: one step and its blow-up.
    Example1(commands::example1::Opts),
    /// Gaussian target from a glued start: the closed-form trajectory.
    Example2(commands::example2::Opts),
    /// Particle version of either example.
    Particles(commands::particles::Opts),
    /// Derivative loss along a synthetic potential with one junction.
    GenericLoss(commands::generic_loss::Opts),
    /// Aggregates every report.json below a directory.
    Report(commands::report::Opts),
}

/// Shared settings after merging flags and the config file.
pub struct Context {
    pub file: ConfigFile,
    pub out: PathBuf,
    pub seed: u64,
    pub grid: Option<usize>,
    pub force: bool,
}

impl Context {
    fn new(common: Common) -> Result<Self, CliError> {
        let file = ConfigFile::load(common.config.as_deref())?;
        let out = match common.out {
            Some(p) => p,
            None => file.string("out")?.map(PathBuf::from).unwrap_or_else(|| PathBuf::from("wgflow-out")),
        };
        let seed = config::resolve(common.seed, file.u64("seed")?, 0);
        let grid = common.grid.or(file.u64("grid")?.map(|g| g as usize));
        if grid.is_some_and(|g| g < 2) {
            return Err(CliError::Config("grid needs at least 2 points".into()));
        }
        let force = common.force || file.bool("force")?.unwrap_or(false);
        Ok(Self {
            file,
            out,
            seed,
            grid,
            force,
        })
    }

    pub fn grid_or(&self, default: usize) -> usize {
        self.grid.unwrap_or(default)
    }
}

pub fn check_step(h: f64) -> Result<f64, CliError> {
    if h > 0.0 && h < 1.0 {
        Ok(h)
    } else {
        Err(CliError::Config(format!("step size {h} is outside (0, 1)")))
    }
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let ctx = Context::new(cli.common)?;
    match cli.command {
        Command::Example1(o) => commands::example1::run(&ctx, o),
        Command::Example2(o) => commands::example2::run(&ctx, o),
        Command::Particles(o) => commands::particles::run(&ctx, o),
        Command::GenericLoss(o) => commands::generic_loss::run(&ctx, o),
        Command::Report(o) => commands::report::run(&ctx, o),
    }
}

fn main() -> ExitCode {
    // clap reports usage errors with status 2, which is reserved here for
    // failed reproduction checks
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(Outcome::Consistent) => ExitCode::SUCCESS,
        Ok(Outcome::Inconsistent) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
