//! Command-line front end for the memsim solver.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{Overrides, RunConfig};
use crate::error::CliError;
use crate::output::OutDir;

#[derive(Debug, Parser)]
#[command(
    name = "memsim",
    version,
    about = "Transmission solves, shape derivatives and plate equilibria"
)]
pub struct Cli {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Number of x-cells.
    #[arg(long, global = true)]
    pub nx: Option<usize>,
    /// Relative CG tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Seed of the randomized test directions.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Solve for the potential and write it with the transmission residuals.
    Solve,
    /// Dirichlet, mechanical and total energy of the configured profile.
    Energy,
    /// Electrostatic force density.
    Force,
    /// Compare the analytic shape derivative with difference quotients.
    ValidateDerivative,
    /// Minimize the total energy and certify the variational inequality.
    Minimize,
    /// Check the interface and plate/ground identities of the boundary family.
    CheckFamily,
    /// Minimize over a range of voltages.
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Energy => "energy",
            Command::Force => "force",
            Command::ValidateDerivative => "validate-derivative",
            Command::Minimize => "minimize",
            Command::CheckFamily => "check-family",
            Command::Sweep => "sweep",
        }
    }
}

/// Load the configuration, echo it and run the command.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let overrides = Overrides {
        out: cli.out.clone(),
        nx: cli.nx,
        tol: cli.tol,
        seed: cli.seed,
    };
    let config = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let out = OutDir::create(&config.run.out)?;
    out.write_text("config.toml", &config.to_toml())?;
    log::info!("{} -> {}", cli.command.name(), config.run.out.display());
    match cli.command {
        Command::Solve => commands::solve(&config, &out),
        Command::Energy => commands::energy(&config, &out),
        Command::Force => commands::force(&config, &out),
        Command::ValidateDerivative => commands::validate_derivative(&config, &out),
        Command::Minimize => commands::minimize(&config, &out),
        Command::CheckFamily => commands::check_family(&config, &out),
        Command::Sweep => commands::sweep(&config, &out),
    }
}
