//! The fluctuation field `Y_t = sqrt(n) (X^n_t - X_t)`, its martingale
//! decomposition, and the Gaussian limit covariance.
//!
//! Three layers: per-replica paths ([`fluctuation_values`],
//! [`martingale::martingale_path`]), the deterministic limit covariance
//! through the Lyapunov flow ([`covariance`]), and replica-ensemble
//! estimators plus normality diagnostics ([`diagnostics`], the covariance
//! helpers re-exported below).

use nalgebra::DMatrix;
use thiserror::Error;

pub mod covariance;
pub mod diagnostics;
pub mod martingale;

pub use covariance::{
    initial_covariance_iid, lyapunov_for_model, lyapunov_integrate, min_eigenvalue, operator_a,
    operator_q, ops_from_path, project_covariance, CovariancePath,
};
pub use diagnostics::{gaussianity_diagnostics, GaussianityReport};
pub use martingale::{martingale_path, reconstruction_residual, MartingalePath};

use crate::meanfield::{Discretization, MeanfieldError};
use crate::model::{ModelError, Observable, TraitSpace};
use crate::sim::MeasurePath;
use crate::stats;

#[derive(Debug, Error)]
pub enum FluctuationError {
    #[error("path alignment failed: {0}")]
    Alignment(String),
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("covariance lost positive semidefiniteness at t = {time} (min eigenvalue {min_eigenvalue})")]
    NotPositiveSemidefinite { time: f64, min_eigenvalue: f64 },
    #[error(transparent)]
    Meanfield(#[from] MeanfieldError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A family of test functions with their grid projections and conditioning
/// diagnostics.
#[derive(Debug, Clone)]
pub struct TestFunctionSet {
    functions: Vec<Observable>,
    labels: Vec<String>,
}

impl TestFunctionSet {
    pub fn new(functions: Vec<Observable>) -> Result<Self, FluctuationError> {
        if functions.is_empty() {
            return Err(FluctuationError::BadInput(
                "need at least one test function".into(),
            ));
        }
        let labels = functions.iter().map(Observable::label).collect();
        Ok(Self { functions, labels })
    }

    /// The usual one-dimensional quartet `{1, x, x^2, bump}`.
    pub fn default_1d(space: &TraitSpace) -> Self {
        let center = space.center();
        let width = 0.15 * (space.upper()[0] - space.lower()[0]);
        Self::new(vec![
            Observable::one(1),
            Observable::monomial_1d(1),
            Observable::monomial_1d(2),
            Observable::bump(center, width, 1.0, 0.0),
        ])
        .expect("non-empty set")
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn functions(&self) -> &[Observable] {
        &self.functions
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn sup_bounds(&self, space: &TraitSpace) -> Vec<f64> {
        self.functions.iter().map(|f| f.sup_bound(space)).collect()
    }

    /// Node values of every function.
    pub fn grid_vectors(&self, disc: &Discretization) -> Vec<Vec<f64>> {
        self.functions
            .iter()
            .map(|f| disc.observable_values(f))
            .collect()
    }

    /// Gram matrix under the grid quadrature pairing.
    pub fn gram(&self, disc: &Discretization) -> DMatrix<f64> {
        let vectors = self.grid_vectors(disc);
        let k = vectors.len();
        let grid = disc.grid();
        let mut g = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                g[(i, j)] = grid.integrate_against(&vectors[i], &vectors[j]);
            }
        }
        g
    }

    /// Condition number of the Gram matrix; large values flag near-linear
    /// dependence on the grid.
    pub fn gram_condition(&self, disc: &Discretization) -> f64 {
        let eig = nalgebra::SymmetricEigen::new(self.gram(disc)).eigenvalues;
        let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }
}

/// Per-snapshot fluctuation values `sqrt(n) (<X^n, phi_j> - <X, phi_j>)`.
///
/// The two paths must carry identical snapshot times and observable labels;
/// mass is checked too since `phi = 1` projections must agree with it.
pub fn fluctuation_values(
    sim: &MeasurePath,
    limit: &MeasurePath,
    scale: u64,
) -> Result<Vec<Vec<f64>>, FluctuationError> {
    if sim.times.len() != limit.times.len()
        || sim
            .times
            .iter()
            .zip(&limit.times)
            .any(|(a, b)| (a - b).abs() > 1e-9)
    {
        return Err(FluctuationError::Alignment(
            "snapshot times differ between the simulated and limit paths".into(),
        ));
    }
    if sim.labels != limit.labels {
        return Err(FluctuationError::Alignment(format!(
            "observable labels differ: {:?} vs {:?}",
            sim.labels, limit.labels
        )));
    }
    let sqrt_n = (scale as f64).sqrt();
    let k = sim.labels.len();
    Ok((0..sim.times.len())
        .map(|m| {
            (0..k)
                .map(|j| sqrt_n * (sim.value(m, j) - limit.value(m, j)))
                .collect()
        })
        .collect())
}

/// Unbiased covariance of replica rows plus jackknife standard errors.
pub fn empirical_covariance(
    rows: &[Vec<f64>],
) -> Result<(DMatrix<f64>, DMatrix<f64>), FluctuationError> {
    if rows.len() < 2 {
        return Err(FluctuationError::BadInput(
            "covariance estimation needs at least two replicas".into(),
        ));
    }
    let cov = stats::sample_covariance(rows);
    let se = if rows.len() >= 3 {
        stats::jackknife_covariance_se(rows)
    } else {
        DMatrix::from_element(cov.nrows(), cov.ncols(), f64::INFINITY)
    };
    Ok((cov, se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    fn toy_path(times: Vec<f64>, labels: Vec<String>, values: Vec<f64>, mass: Vec<f64>) -> MeasurePath {
        MeasurePath {
            times,
            mass,
            labels,
            values,
        }
    }

    #[test]
    fn identical_paths_have_zero_fluctuation() {
        let p = toy_path(
            vec![0.0, 1.0],
            vec!["one".into()],
            vec![1.0, 0.9],
            vec![1.0, 0.9],
        );
        let y = fluctuation_values(&p, &p, 100).unwrap();
        assert!(y.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn scale_one_is_plain_difference() {
        let sim = toy_path(vec![0.0], vec!["one".into()], vec![1.4], vec![1.4]);
        let mf = toy_path(vec![0.0], vec!["one".into()], vec![1.0], vec![1.0]);
        let y = fluctuation_values(&sim, &mf, 1).unwrap();
        assert!((y[0][0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn misaligned_paths_rejected() {
        let sim = toy_path(vec![0.0], vec!["one".into()], vec![1.0], vec![1.0]);
        let mf = toy_path(vec![0.5], vec!["one".into()], vec![1.0], vec![1.0]);
        assert!(fluctuation_values(&sim, &mf, 10).is_err());
        let mf2 = toy_path(vec![0.0], vec!["x".into()], vec![1.0], vec![1.0]);
        assert!(fluctuation_values(&sim, &mf2, 10).is_err());
    }

    #[test]
    fn empirical_covariance_examples() {
        // Identical rows: zero matrix. Antithetic pair: variance 2.
        let zero = empirical_covariance(&vec![vec![3.0]; 6]).unwrap().0;
        assert!(zero[(0, 0)].abs() < 1e-15);
        let (two, _) = empirical_covariance(&[vec![1.0], vec![-1.0]]).unwrap();
        assert!((two[(0, 0)] - 2.0).abs() < 1e-15);
        assert!(empirical_covariance(&[vec![1.0]]).is_err());
    }

    #[test]
    fn default_test_set_is_well_conditioned() {
        let spec = ModelSpec::degenerate(2.0, 1.0, 1.0, 10).unwrap();
        let disc = crate::meanfield::Discretization::new(&spec, 64).unwrap();
        let set = TestFunctionSet::default_1d(spec.space());
        assert_eq!(set.len(), 4);
        let cond = set.gram_condition(&disc);
        assert!(cond.is_finite() && cond > 1.0, "condition {cond}");
        assert!(cond < 1e6, "test set badly conditioned: {cond}");
    }
}
