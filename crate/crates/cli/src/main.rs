//! Command-line front end for dimension-reduced tomographic reconstruction.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::FilterArgs;
use crate::config::{ExperimentConfig, Overrides};
use crate::error::{io_at, Result};

#[derive(Parser)]
#[command(name = "dimred-ct", version, about = "Prior-based dimension reduction for static and dynamic X-ray tomography")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the truncated prior basis and write it to a file.
    Basis {
        #[arg(long)]
        out: PathBuf,
        /// Rebuild even if the file matches the configuration.
        #[arg(long)]
        force: bool,
    },
    /// Simulate noisy sinograms and ground-truth frames for the dynamic scene.
    Simulate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct one sinogram with the reduced Tikhonov or Bayes solver.
    Static {
        #[arg(long)]
        sinogram: PathBuf,
        #[arg(long)]
        basis: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the dimension-reduced Kalman filter over a sequence.
    Filter {
        /// Directory of sino_*.drtk files.
        #[arg(long, conflicts_with = "simulate")]
        sinograms: Option<PathBuf>,
        /// Simulate the measurements in memory instead.
        #[arg(long)]
        simulate: bool,
        #[arg(long)]
        basis: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoints already in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Run the backward smoothing pass over filter checkpoints.
    Smooth {
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        basis: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relative errors of reconstructed frames against the ground truth, as CSV.
    Metrics {
        /// Directories of reconstructed frames; repeat for several methods.
        #[arg(long, required = true)]
        frames: Vec<PathBuf>,
        #[arg(long)]
        truth: PathBuf,
        /// Label to use instead of the method stored in each frame.
        #[arg(long)]
        method: Option<String>,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Filtered back-projection of one sinogram.
    Fbp {
        #[arg(long)]
        sinogram: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.overrides;
    if let Command::Smooth { checkpoints, .. } = &cli.command {
        let echoed = checkpoints.join(commands::CONFIG_ECHO);
        if overrides.config.is_none() && echoed.exists() {
            log::info!("using configuration from {}", echoed.display());
            overrides.config = Some(echoed);
        }
    }
    let stochastic = matches!(cli.command, Command::Simulate { .. } | Command::Filter { simulate: true, .. });
    if stochastic && overrides.seed.is_none() {
        return Err(error::CliError::config("--seed is required when simulating measurements"));
    }
    let config = ExperimentConfig::resolve(&overrides)?;
    log::debug!("effective configuration:\n{}", config.to_json());

    match cli.command {
        Command::Basis { out, force } => commands::cmd_basis(&config, &out, force),
        Command::Simulate { out } => commands::cmd_simulate(&config, &out),
        Command::Static { sinogram, basis, out } => commands::cmd_static(&config, &sinogram, basis.as_deref(), &out),
        Command::Filter { sinograms, simulate, basis, out, resume } => commands::cmd_filter(
            &config,
            FilterArgs { sinograms: sinograms.as_deref(), simulate, basis: basis.as_deref(), out: &out, resume },
        ),
        Command::Smooth { checkpoints, basis, out } => {
            commands::cmd_smooth(&config, &checkpoints, basis.as_deref(), &out)
        }
        Command::Metrics { frames, truth, method, out } => {
            let csv = commands::cmd_metrics(&frames, &truth, method.as_deref())?;
            match out {
                Some(path) => io_at(&path, std::fs::write(&path, csv)),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Fbp { sinogram, out } => commands::cmd_fbp(&config, &sinogram, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
