use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::{ExperimentConfig, Overrides, Resolved};

/// Bad input from the user: flags, config file or scenario names.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, Parser)]
#[command(name = "greenbrown", version, about = "Green/brown credit portfolio loss experiments")]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Monte Carlo replications.
    #[arg(long, global = true)]
    samples: Option<usize>,

    /// Use 10^4 replications unless --samples is given.
    #[arg(long, global = true)]
    quick: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Limit-law density and cdf curves for each scenario and factor shape.
    Limit,
    /// VaR against the green default probability and the green exposure share.
    Var,
    /// VaR at 99% against the factor shape for the single-class markets.
    AlphaSens,
    /// Empirical against analytic VaR along a grid of portfolio sizes.
    Converge,
    /// Fit a power law to ranked exposures read from a `rank,weight` CSV.
    FitExposures { csv: PathBuf },
    /// Simulate one finite portfolio.
    Simulate {
        #[arg(long)]
        scenario: Option<String>,
        /// Number of obligors.
        #[arg(long)]
        obligors: Option<usize>,
        /// Power-law decay of exposures; 0 for uniform.
        #[arg(long)]
        decay: Option<f64>,
        /// Also write every simulated loss.
        #[arg(long)]
        raw: bool,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Command::Simulate {
        scenario,
        obligors,
        decay,
        raw,
    } = &cli.command
    {
        let sim = &mut config.simulate;
        if let Some(s) = scenario {
            sim.scenario = s.clone();
        }
        if let Some(n) = obligors {
            sim.obligors = *n;
        }
        if let Some(a) = decay {
            sim.decay = *a;
        }
        sim.raw |= raw;
    }
    let resolved = Resolved::new(
        config,
        Overrides {
            out: cli.out,
            seed: cli.seed,
            samples: cli.samples,
            quick: cli.quick,
        },
    )?;
    let written = match &cli.command {
        Command::Limit => commands::limit(&resolved)?,
        Command::Var => commands::var(&resolved)?,
        Command::AlphaSens => commands::alpha_sensitivity(&resolved)?,
        Command::Converge => commands::converge(&resolved)?,
        Command::FitExposures { csv } => commands::fit_exposures(&resolved, csv)?,
        Command::Simulate { .. } => commands::simulate(&resolved)?,
    };
    for path in written {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
