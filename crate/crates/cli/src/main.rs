//! `mflq`: solve, check and simulate linear mean-field LQ problems described
//! in TOML scenario files.

mod commands;
mod scenario;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mflq_core::error::Error as CoreError;
use thiserror::Error;

use crate::commands::Output;
use crate::scenario::{check_settings, load_scenario, Scenario};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    NotConverged(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::NotConverged(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Dimension { .. }
            | CoreError::NonFinite(_)
            | CoreError::Precondition(_)
            | CoreError::Config(_) => CliError::Validation(msg),
            CoreError::NonConvergent { .. } => CliError::NotConverged(msg),
            CoreError::Export(_) => CliError::Io(msg),
            CoreError::Diverged { .. }
            | CoreError::Irregular { .. }
            | CoreError::OffGrid(_)
            | CoreError::NonFiniteState { .. }
            | CoreError::Degenerate(_)
            | CoreError::Eigen(_) => CliError::Numerical(msg),
        }
    }
}

#[derive(Parser)]
#[command(name = "mflq", version, about = "Mean-field LQ control: Riccati solvers, stabilization checks, Monte Carlo")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the coupled Riccati equations backward over [0, T]
    Riccati(Args),
    /// Solve the coupled algebraic Riccati equations
    Are(Args),
    /// Decide mean-square stabilizability (exit 3 when not stabilizable)
    Check(Args),
    /// Monte Carlo simulation under the configured feedback
    Simulate(Args),
    /// Re-run both bundled paper examples and compare with the printed values
    Reproduce(Overrides),
}

#[derive(clap::Args)]
struct Args {
    /// Scenario file, or the name of a bundled scenario
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(clap::Args)]
struct Overrides {
    /// Directory for the JSON summary and CSV table
    #[arg(long)]
    out: Option<PathBuf>,
    /// What to print on stdout: the JSON summary or the CSV table
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl Overrides {
    fn apply(&self, s: &mut Scenario) {
        if let Some(seed) = self.seed {
            s.simulation.seed = seed;
        }
        if let Some(paths) = self.paths {
            s.simulation.paths = paths;
        }
        if let Some(dt) = self.dt {
            s.simulation.dt = dt;
        }
        if let Some(t) = self.horizon {
            s.horizon = Some(t);
        }
        if let Some(tol) = self.tol {
            s.solver.tol = tol;
        }
    }
}

fn load(args: &Args) -> Result<Scenario, CliError> {
    let mut s = load_scenario(&args.config)?;
    args.overrides.apply(&mut s);
    check_settings(&s)?;
    Ok(s)
}

fn emit(out: &Output, dir: Option<&Path>, format: Format) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    // a closed stdout (`| head`) is not an error
    let quiet = |r: std::io::Result<()>| match r {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => other.map_err(io),
    };
    let json = serde_json::to_string_pretty(&out.summary).map_err(|e| CliError::Io(e.to_string()))?;
    if format == Format::Csv && out.table.is_none() {
        return Err(CliError::Validation(format!(
            "--format csv: `{}` produces no table; use --format json",
            out.stem
        )));
    }
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join(format!("{}.json", out.stem)), format!("{json}\n")).map_err(io)?;
        if let Some(table) = &out.table {
            std::fs::write(dir.join(format!("{}.csv", out.stem)), table).map_err(io)?;
        }
    }
    let mut stdout = std::io::stdout().lock();
    match format {
        Format::Json => quiet(writeln!(stdout, "{json}"))?,
        Format::Csv => quiet(stdout.write_all(out.table.as_deref().unwrap_or_default()))?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let (output, overrides) = match &cli.command {
        Command::Riccati(a) => (commands::riccati(&load(a)?)?, &a.overrides),
        Command::Are(a) => (commands::are(&load(a)?)?, &a.overrides),
        Command::Check(a) => (commands::check(&load(a)?)?, &a.overrides),
        Command::Simulate(a) => (commands::simulate(&load(a)?)?, &a.overrides),
        Command::Reproduce(o) => (commands::reproduce(&|s| o.apply(s))?, o),
    };
    emit(&output, overrides.out.as_deref(), overrides.format)?;
    Ok(output.exit)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
