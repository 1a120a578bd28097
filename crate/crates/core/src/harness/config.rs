//! Experiment configuration: one TOML document describes the model, the
//! initial condition, the replica schedule and the per-experiment knobs.
//!
//! The grammar is plain TOML; the schema is this module's serde derives.
//! A minimal document:
//!
//! ```toml
//! seed = 42
//! replicas = 100
//! horizon = 10.0
//! scales = [100, 400, 1600]
//! snapshots = 41
//!
//! [model.space]
//! lower = [0.0]
//! upper = [1.0]
//!
//! [model.birth]
//! family = "constant"
//! value = 2.0
//!
//! [model.death]
//! family = "constant"
//! value = 1.0
//!
//! [[model.competition.terms]]
//! f = { family = "constant", value = 1.0 }
//! g = { family = "constant", value = 1.0 }
//!
//! [model.dispersal]
//! family = "point_mass"
//!
//! [init]
//! mass = 0.5
//! law = "point_mass"
//! location = [0.5]
//! mode = "quantized"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{
    DispersalKernel, KernelTerm, ModelSpec, Observable, ScalarField, SeparableKernel, TraitSpace,
};
use crate::sim::InitialCondition;

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    LlnConvergence,
    CltCovariance,
    MartingaleCheck,
    OuStationary,
    TailBoundCheck,
    MeanfieldValidation,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::LlnConvergence => "lln_convergence",
            ExperimentKind::CltCovariance => "clt_covariance",
            ExperimentKind::MartingaleCheck => "martingale_check",
            ExperimentKind::OuStationary => "ou_stationary",
            ExperimentKind::TailBoundCheck => "tail_bound_check",
            ExperimentKind::MeanfieldValidation => "meanfield_validation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub terms: Vec<KernelTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub space: SpaceConfig,
    pub birth: ScalarField,
    pub death: ScalarField,
    pub competition: KernelConfig,
    pub dispersal: DispersalKernel,
    /// Validation lattice override.
    #[serde(default)]
    pub lattice_per_dim: Option<usize>,
}

impl ModelConfig {
    pub fn build(&self, scale: u64) -> Result<ModelSpec, HarnessError> {
        let space = TraitSpace::new(self.space.lower.clone(), self.space.upper.clone())?;
        let spec = ModelSpec::with_lattice(
            space,
            self.birth.clone(),
            self.death.clone(),
            SeparableKernel::new(self.competition.terms.clone()),
            self.dispersal.clone(),
            scale,
            self.lattice_per_dim
                .unwrap_or(crate::model::DEFAULT_LATTICE_PER_DIM),
        )?;
        Ok(spec)
    }
}

/// Snapshot schedule: a uniform count over `[0, horizon]` or explicit times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SnapshotSpec {
    Count(usize),
    Times(Vec<f64>),
}

impl Default for SnapshotSpec {
    fn default() -> Self {
        SnapshotSpec::Count(41)
    }
}

impl SnapshotSpec {
    pub fn times(&self, horizon: f64) -> Vec<f64> {
        match self {
            SnapshotSpec::Count(k) => {
                let k = (*k).max(2);
                (0..k)
                    .map(|i| horizon * i as f64 / (k - 1) as f64)
                    .collect()
            }
            SnapshotSpec::Times(ts) => ts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObservablesConfig {
    Named { set: String },
    List { list: Vec<Observable> },
}

impl Default for ObservablesConfig {
    fn default() -> Self {
        ObservablesConfig::Named {
            set: "default".into(),
        }
    }
}

impl ObservablesConfig {
    pub fn build(&self, space: &TraitSpace) -> Result<Vec<Observable>, HarnessError> {
        match self {
            ObservablesConfig::Named { set } if set == "default" => {
                if space.dim() == 1 {
                    Ok(crate::fluctuation::TestFunctionSet::default_1d(space)
                        .functions()
                        .to_vec())
                } else {
                    Ok(vec![Observable::one(space.dim())])
                }
            }
            ObservablesConfig::Named { set } if set == "mass" => {
                Ok(vec![Observable::one(space.dim())])
            }
            ObservablesConfig::Named { set } => Err(HarnessError::Config(format!(
                "unknown observable set '{set}' (use \"default\", \"mass\" or an explicit list)"
            ))),
            ObservablesConfig::List { list } => {
                if list.is_empty() {
                    Err(HarnessError::Config("observable list is empty".into()))
                } else {
                    Ok(list.clone())
                }
            }
        }
    }
}

fn default_mf_nodes() -> usize {
    crate::meanfield::DEFAULT_NODES_PER_DIM
}
fn default_mf_dt() -> f64 {
    2e-3
}
fn default_convergence_dt() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanfieldOptions {
    #[serde(default = "default_mf_nodes")]
    pub nodes_per_dim: usize,
    #[serde(default = "default_mf_dt")]
    pub dt: f64,
    /// Coarse step of the self-convergence probe.
    #[serde(default = "default_convergence_dt")]
    pub convergence_dt: f64,
}

impl Default for MeanfieldOptions {
    fn default() -> Self {
        Self {
            nodes_per_dim: default_mf_nodes(),
            dt: default_mf_dt(),
            convergence_dt: default_convergence_dt(),
        }
    }
}

fn default_eval_times() -> Vec<f64> {
    vec![1.0, 3.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltOptions {
    #[serde(default = "default_eval_times")]
    pub eval_times: Vec<f64>,
}

impl Default for CltOptions {
    fn default() -> Self {
        Self {
            eval_times: default_eval_times(),
        }
    }
}

fn default_t_star() -> f64 {
    20.0
}
fn default_lyapunov_nodes() -> usize {
    9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuOptions {
    #[serde(default = "default_t_star")]
    pub t_star: f64,
    /// Grid size of the degenerate Lyapunov cross-check.
    #[serde(default = "default_lyapunov_nodes")]
    pub lyapunov_nodes: usize,
}

impl Default for OuOptions {
    fn default() -> Self {
        Self {
            t_star: default_t_star(),
            lyapunov_nodes: default_lyapunov_nodes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailConfigEntry {
    pub scale: u64,
    /// Physical horizon of the simulated process.
    pub s: f64,
    /// Free parameter of the exponential form.
    pub t: f64,
    pub beta: f64,
}

fn default_tail_configs() -> Vec<TailConfigEntry> {
    vec![
        TailConfigEntry { scale: 50, s: 0.5, t: 0.65, beta: 0.9 },
        TailConfigEntry { scale: 50, s: 1.0, t: 0.50, beta: 0.9 },
        TailConfigEntry { scale: 200, s: 0.5, t: 0.65, beta: 0.9 },
        TailConfigEntry { scale: 200, s: 1.0, t: 0.50, beta: 0.9 },
        TailConfigEntry { scale: 100, s: 1.0, t: 0.30, beta: 0.9 },
    ]
}
fn default_tail_replicas() -> usize {
    10_000
}
fn default_coupling_replicas() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailOptions {
    #[serde(default = "default_tail_configs")]
    pub configs: Vec<TailConfigEntry>,
    #[serde(default = "default_tail_replicas")]
    pub replicas: usize,
    #[serde(default = "default_coupling_replicas")]
    pub coupling_replicas: usize,
}

impl Default for TailOptions {
    fn default() -> Self {
        Self {
            configs: default_tail_configs(),
            replicas: default_tail_replicas(),
            coupling_replicas: default_coupling_replicas(),
        }
    }
}

fn default_martingale_observables() -> Vec<Observable> {
    vec![Observable::one(1), Observable::monomial_1d(1)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleOptions {
    #[serde(default = "default_martingale_observables")]
    pub observables: Vec<Observable>,
}

impl Default for MartingaleOptions {
    fn default() -> Self {
        Self {
            observables: default_martingale_observables(),
        }
    }
}

/// One experiment, fully described.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub kind: Option<ExperimentKind>,
    pub seed: u64,
    pub replicas: usize,
    pub horizon: f64,
    pub scales: Vec<u64>,
    #[serde(default)]
    pub snapshots: SnapshotSpec,
    pub model: ModelConfig,
    pub init: InitialCondition,
    #[serde(default)]
    pub observables: ObservablesConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub meanfield: MeanfieldOptions,
    #[serde(default)]
    pub clt: CltOptions,
    #[serde(default)]
    pub ou: OuOptions,
    #[serde(default)]
    pub tail: TailOptions,
    #[serde(default)]
    pub martingale: MartingaleOptions,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
}

impl ExperimentConfig {
    pub fn from_toml_str(doc: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(doc)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let doc = std::fs::read_to_string(path)?;
        Self::from_toml_str(&doc)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.scales.is_empty() {
            return Err(HarnessError::Config("need at least one scale n".into()));
        }
        if self.horizon < 0.0 {
            return Err(HarnessError::Config("horizon must be nonnegative".into()));
        }
        // The model must validate at every requested scale (the fields are
        // scale free, so one build suffices).
        let spec = self.model.build(self.scales[0])?;
        self.observables.build(spec.space())?;
        Ok(())
    }

    /// Tolerance by name, with config overrides beating the built-ins.
    pub fn tol(&self, name: &str, default: f64) -> f64 {
        self.tolerances.get(name).copied().unwrap_or(default)
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        self.snapshots.times(self.horizon)
    }

    /// Hash of the canonical JSON serialization; manifest identity.
    pub fn canonical_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
