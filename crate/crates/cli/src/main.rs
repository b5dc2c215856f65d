//! `lifecycle`: weights, feedback policy, simulation, allocation profiles
//! and the oracle suite for the delayed-income lifecycle model.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lifecycle_core::validate::Suite;
use lifecycle_core::Error;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "lifecycle", version, about = "Lifecycle consumption and investment with delayed labor income")]
pub struct Cli {
    /// Model configuration (TOML, or JSON by extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for path simulation (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve the human-capital weights and write g and h as CSV.
    Weights(WeightsArgs),
    /// Controls and value at one state.
    Policy(PolicyArgs),
    /// Closed-loop simulation under the optimal policy.
    Simulate(SimulateArgs),
    /// Mean allocation profile over the working life.
    Profile(ProfileArgs),
    /// Run the oracle suite.
    Validate(ValidateArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct WeightsArgs {
    /// Time steps on [0, tau_R]; the lag step must match.
    #[arg(long)]
    pub nt: Option<usize>,
    /// Lag steps on [-d, 0].
    #[arg(long)]
    pub nz: Option<usize>,
    /// Steps per year when neither --nt nor --nz is given.
    #[arg(long, default_value_t = 250)]
    pub steps_per_year: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    /// Write every k-th time row and lag column of h.
    #[arg(long, default_value_t = 10)]
    pub h_stride: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct PolicyArgs {
    #[arg(long)]
    pub t: f64,
    /// Financial wealth.
    #[arg(long, allow_negative_numbers = true)]
    pub w: f64,
    /// Current income.
    #[arg(long)]
    pub y: f64,
    /// Income history as `zeta,y` rows covering [-d, 0]; flat at --y if absent.
    #[arg(long)]
    pub hist_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 250)]
    pub steps_per_year: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub w0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub y0: f64,
    /// Flat history level, or a `zeta,y` CSV; flat at --y0 if absent.
    #[arg(long)]
    pub hist: Option<String>,
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    #[arg(long, default_value_t = 250)]
    pub steps_per_year: usize,
    /// Simulated horizon in years (default: tau_R).
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, default_value_t = 25)]
    pub record_every: usize,
    #[arg(long, default_value_t = 10)]
    pub keep_paths: usize,
    #[arg(long)]
    pub antithetic: bool,
    /// Also estimate the objective (needs Gamma(0) > 0 and horizon tau_R).
    #[arg(long)]
    pub value: bool,
    /// Run the exact total-wealth path alongside on the same noise.
    #[arg(long)]
    pub compare_exact: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct ProfileArgs {
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub w0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub y0: f64,
    /// Flat history level, or a `zeta,y` CSV; flat at --y0 if absent.
    #[arg(long)]
    pub hist: Option<String>,
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    #[arg(long, default_value_t = 250)]
    pub steps_per_year: usize,
    #[arg(long, default_value_t = 25)]
    pub record_every: usize,
    /// Overlay the profile of the same model without delay.
    #[arg(long)]
    pub compare_phi0: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct ValidateArgs {
    /// hjb, identities, mc or all.
    #[arg(long, default_value = "all")]
    pub suite: Suite,
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 500)]
    pub steps_per_year: usize,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub w0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub y0: f64,
    #[arg(long)]
    pub no_antithetic: bool,
}

/// Exit status with its message.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_SOLVER: u8 = 2;
pub const EXIT_ADMISSIBILITY: u8 = 3;
pub const EXIT_ORACLE: u8 = 4;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NoConvergence { .. } | Error::BoundaryViolation { .. } | Error::ConfigMismatch(_) => {
                EXIT_SOLVER
            }
            Error::AdmissibilityBreach { .. } | Error::InadmissibleState { .. } => EXIT_ADMISSIBILITY,
            _ => EXIT_CONFIG,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
