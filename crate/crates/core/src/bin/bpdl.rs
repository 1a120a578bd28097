//! Command-line runner for the simulation experiments.
//!
//! Each subcommand is one experiment kind. Without `--config` the built-in
//! desk-scale preset runs; flags override the seed, replica count, output
//! directory and worker threads. The process exits 0 exactly when every
//! criterion of the run passes.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bpdl_core::harness::{self, presets, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(
    name = "bpdl",
    version,
    about = "Exact birth-death-competition-dispersal population simulator and limit-law checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML experiment configuration; the built-in preset when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for CSV/JSON artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Replica count override.
    #[arg(long)]
    replicas: Option<usize>,
    /// Worker thread override (also: BPDL_THREADS).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Mass convergence to the deterministic limit over a scale ladder.
    LlnConvergence(CommonArgs),
    /// Fluctuation covariance against the Lyapunov flow, with Gaussianity.
    CltCovariance(CommonArgs),
    /// Zero-mean martingale and compensator identity at the horizon.
    MartingaleCheck(CommonArgs),
    /// Stationary fluctuation variance of the degenerate system.
    OuStationary(CommonArgs),
    /// Large-deviation tail bounds against Monte-Carlo estimates.
    TailBoundCheck(CommonArgs),
    /// Grid solver validation: duality, order, closed form.
    MeanfieldValidation(CommonArgs),
}

impl Command {
    fn kind(&self) -> ExperimentKind {
        match self {
            Command::LlnConvergence(_) => ExperimentKind::LlnConvergence,
            Command::CltCovariance(_) => ExperimentKind::CltCovariance,
            Command::MartingaleCheck(_) => ExperimentKind::MartingaleCheck,
            Command::OuStationary(_) => ExperimentKind::OuStationary,
            Command::TailBoundCheck(_) => ExperimentKind::TailBoundCheck,
            Command::MeanfieldValidation(_) => ExperimentKind::MeanfieldValidation,
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::LlnConvergence(a)
            | Command::CltCovariance(a)
            | Command::MartingaleCheck(a)
            | Command::OuStationary(a)
            | Command::TailBoundCheck(a)
            | Command::MeanfieldValidation(a) => a,
        }
    }
}

fn build_config(command: &Command) -> Result<ExperimentConfig, harness::HarnessError> {
    let kind = command.kind();
    let args = command.args();
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => presets::for_kind(kind),
    };
    cfg.kind = Some(kind);
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(replicas) = args.replicas {
        cfg.replicas = replicas;
    }
    if let Some(threads) = args.threads {
        cfg.threads = Some(threads);
    }
    if let Some(out) = &args.out {
        cfg.output = Some(out.clone());
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match build_config(&cli.command) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match harness::run(&cfg) {
        Ok(outcome) => {
            if let Some(dir) = &cfg.output {
                eprintln!(
                    "wrote {} artifacts to {}",
                    outcome.manifest.outputs.len(),
                    dir.display()
                );
            }
            if outcome.report.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
