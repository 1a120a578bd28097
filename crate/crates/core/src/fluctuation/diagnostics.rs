//! Gaussianity diagnostics for fluctuation samples.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::stats;

use super::FluctuationError;

/// Minimum sample count the diagnostics accept.
pub const MIN_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianityReport {
    pub samples: usize,
    pub mean: f64,
    pub sd: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// KS distance between the sample and the normal fitted to it.
    pub ks_statistic: f64,
    /// Monte-Carlo p-value of the fitted-normal KS statistic.
    pub ks_pvalue: f64,
    /// Set when the sample is (numerically) constant.
    pub degenerate: bool,
}

/// Moment and distribution diagnostics against the Gaussian limit law.
///
/// Fitting the normal before the KS test changes the null law of the
/// statistic, so the p-value is calibrated by Monte Carlo: `n_mc` synthetic
/// samples of the same size are drawn from a normal, refitted, and ranked.
pub fn gaussianity_diagnostics<R: Rng>(
    samples: &[f64],
    rng: &mut R,
    n_mc: usize,
) -> Result<GaussianityReport, FluctuationError> {
    if samples.len() < MIN_SAMPLES {
        return Err(FluctuationError::BadInput(format!(
            "need at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let mean = stats::mean(samples);
    let var = stats::variance(samples);
    let sd = var.sqrt();
    let scale = samples.iter().fold(0.0f64, |a, &x| a.max(x.abs())).max(1.0);
    if sd <= 1e-12 * scale {
        return Ok(GaussianityReport {
            samples: samples.len(),
            mean,
            sd,
            skewness: 0.0,
            excess_kurtosis: 0.0,
            ks_statistic: 1.0,
            ks_pvalue: 0.0,
            degenerate: true,
        });
    }
    let observed = stats::ks_distance_fitted_normal(samples);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut at_least = 0usize;
    let mut buf = vec![0.0; samples.len()];
    for _ in 0..n_mc {
        for b in buf.iter_mut() {
            *b = normal.sample(rng);
        }
        if stats::ks_distance_fitted_normal(&buf) >= observed {
            at_least += 1;
        }
    }
    Ok(GaussianityReport {
        samples: samples.len(),
        mean,
        sd,
        skewness: stats::skewness(samples),
        excess_kurtosis: stats::excess_kurtosis(samples),
        ks_statistic: observed,
        ks_pvalue: (at_least + 1) as f64 / (n_mc + 1) as f64,
        degenerate: false,
    })
}
