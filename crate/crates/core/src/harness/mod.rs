//! Experiment orchestration: configuration, deterministic seeding, replica
//! scheduling, persistence and reports.

use std::path::PathBuf;
use std::time::Instant;

use thiserror::Error;

pub mod config;
pub mod experiments;
pub mod presets;
pub mod report;
pub mod seed;

pub use config::{ExperimentConfig, ExperimentKind};
pub use report::{Artifact, CriterionResult, RunManifest, RunReport};
pub use seed::{derive_seed, stream_rng};

use crate::bounds::BoundsError;
use crate::fluctuation::FluctuationError;
use crate::meanfield::MeanfieldError;
use crate::model::ModelError;
use crate::ou1d::OuError;
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Meanfield(#[from] MeanfieldError),
    #[error(transparent)]
    Fluctuation(#[from] FluctuationError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Ou(#[from] OuError),
}

/// A completed run: the report, its manifest, and where artifacts went.
#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub manifest: RunManifest,
    pub written: Vec<PathBuf>,
}

/// Execute the configured experiment, write artifacts, print one line per
/// criterion.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome, HarnessError> {
    let kind = cfg
        .kind
        .ok_or_else(|| HarnessError::Config("experiment kind not set".into()))?;
    let started = Instant::now();
    let (report, artifacts) = match kind {
        ExperimentKind::LlnConvergence => experiments::lln_convergence(cfg)?,
        ExperimentKind::CltCovariance => experiments::clt_covariance(cfg)?,
        ExperimentKind::MartingaleCheck => experiments::martingale_check(cfg)?,
        ExperimentKind::OuStationary => experiments::ou_stationary(cfg)?,
        ExperimentKind::TailBoundCheck => experiments::tail_bound_check(cfg)?,
        ExperimentKind::MeanfieldValidation => experiments::meanfield_validation(cfg)?,
    };
    let elapsed = started.elapsed().as_secs_f64();

    let replica_seeds: Vec<String> = (0..cfg.replicas as u64)
        .map(|r| hex(&derive_seed(cfg.seed, r, "events")))
        .collect();
    let mut manifest = RunManifest {
        kind,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.canonical_hash(),
        seed: cfg.seed,
        seed_scheme: "sha256(\"bpdl.seed.v1\" || master_le64 || replica_le64 || label_len_le64 || label)"
            .to_string(),
        replica_seeds,
        elapsed_seconds: elapsed,
        outputs: Vec::new(),
    };

    let mut written = Vec::new();
    if let Some(dir) = &cfg.output {
        std::fs::create_dir_all(dir)?;
        for artifact in &artifacts {
            let path = dir.join(&artifact.name);
            std::fs::write(&path, &artifact.bytes)?;
            manifest.outputs.push(artifact.name.clone());
            written.push(path);
        }
        let report_path = dir.join("report.json");
        std::fs::write(&report_path, report.to_json())?;
        manifest.outputs.push("report.json".into());
        written.push(report_path);
        let manifest_path = dir.join("manifest.json");
        std::fs::write(&manifest_path, manifest.to_json())?;
        manifest.outputs.push("manifest.json".into());
        written.push(manifest_path);
    }

    report.print_lines();
    Ok(RunOutcome {
        report,
        manifest,
        written,
    })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
