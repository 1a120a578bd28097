//! Pass/fail reports, run manifests and flat-file artifacts.

use serde::Serialize;

use super::config::ExperimentKind;

/// One acceptance gate: an observed value against its threshold.
#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: String,
    pub observed: f64,
    pub threshold: f64,
    pub pass: bool,
    pub detail: String,
}

impl CriterionResult {
    pub fn new(
        id: impl Into<String>,
        observed: f64,
        threshold: f64,
        pass: bool,
        detail: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            observed,
            threshold,
            pass,
            detail: detail.into(),
        }
    }

    /// `|observed| <= threshold` gate.
    pub fn abs_le(id: impl Into<String>, observed: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self::new(id, observed, threshold, observed.abs() <= threshold, detail)
    }

    /// `lo <= observed <= hi` gate; threshold records the upper edge.
    pub fn in_window(
        id: impl Into<String>,
        observed: f64,
        lo: f64,
        hi: f64,
        detail: impl Into<String>,
    ) -> Self {
        Self::new(
            id,
            observed,
            hi,
            observed >= lo && observed <= hi,
            detail.into() + &format!(" (window [{lo}, {hi}])"),
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub criteria: Vec<CriterionResult>,
}

impl RunReport {
    pub fn new(kind: ExperimentKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            criteria: Vec::new(),
        }
    }

    pub fn push(&mut self, c: CriterionResult) {
        self.criteria.push(c);
    }

    pub fn all_pass(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }

    /// One line per criterion on stdout.
    pub fn print_lines(&self) {
        for c in &self.criteria {
            println!(
                "[{}] {} observed={:.6e} threshold={:.6e} {}",
                if c.pass { "PASS" } else { "FAIL" },
                c.id,
                c.observed,
                c.threshold,
                c.detail
            );
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Everything needed to reproduce a run byte for byte.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub kind: ExperimentKind,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub seed_scheme: String,
    /// Hex event-stream seeds per replica index.
    pub replica_seeds: Vec<String>,
    pub elapsed_seconds: f64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// In-memory output file, written by the runner.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn from_string(name: impl Into<String>, text: String) -> Self {
        Self {
            name: name.into(),
            bytes: text.into_bytes(),
        }
    }
}

/// Covariance table rows in the `t, i, j, empirical, theoretical, se` flat
/// schema.
pub struct CovarianceCsv {
    rows: Vec<String>,
}

impl CovarianceCsv {
    pub fn new() -> Self {
        Self {
            rows: vec!["scale,t,i,j,empirical,theoretical,se".to_string()],
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(&mut self, scale: u64, t: f64, i: usize, j: usize, emp: f64, theory: f64, se: f64) {
        self.rows
            .push(format!("{scale},{t},{i},{j},{emp},{theory},{se}"));
    }

    pub fn into_artifact(self, name: &str) -> Artifact {
        Artifact::from_string(name, self.rows.join("\n") + "\n")
    }
}

impl Default for CovarianceCsv {
    fn default() -> Self {
        Self::new()
    }
}
