//! `ioncouple` command-line front end.

mod commands;
mod config;

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<ioncouple::Error> for CliError {
    fn from(e: ioncouple::Error) -> Self {
        use ioncouple::Error as E;
        match e {
            E::Data { .. } | E::Io(_) | E::InvalidInput(_) => CliError::Data(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "ioncouple", version, about = "Free-space coupling of light to a single trapped ion")]
struct Cli {
    /// JSON configuration; built-in Yb+ defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `scan.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Minimal and expected saturation powers for the configured setup.
    Predict,
    /// Fit a saturation-curve CSV and extract the coupling efficiency.
    Fit { path: PathBuf },
    /// Simulate or reconstruct a saturation focal scan.
    Scan {
        #[command(subcommand)]
        mode: ScanMode,
    },
    /// Doughnut-beam waist maximising the dipole-mode overlap.
    OptimizeWaist,
    /// Coupling budget with uncertainty contributions.
    CouplingReport {
        /// Saturation CSV to fit instead of the configured measurement.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum ScanMode {
    /// Write `forward_scan.csv` and `truth.csv` to the output directory.
    Simulate,
    /// Fit every pixel; writes `scan_map.csv` and `scan_summary.json`.
    Reconstruct {
        /// Forward-scan CSV; defaults to `forward_scan.csv` in the output directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = config::Config::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.scan.seed = seed;
    }
    let ctx = commands::Context {
        config,
        format: cli.format,
        out: cli.out,
    };
    match cli.command {
        Command::Predict => commands::predict(&ctx),
        Command::Fit { path } => commands::fit(&ctx, &path),
        Command::Scan { mode: ScanMode::Simulate } => commands::scan_simulate(&ctx),
        Command::Scan {
            mode: ScanMode::Reconstruct { input },
        } => commands::scan_reconstruct(&ctx, input.as_deref()),
        Command::OptimizeWaist => commands::optimize_waist(&ctx),
        Command::CouplingReport { data } => commands::coupling_report(&ctx, data.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
