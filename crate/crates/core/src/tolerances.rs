//! Centralized acceptance thresholds.
//!
//! Every numeric gate used by the experiment harness and the acceptance
//! suite lives here, so there is a single source of truth. Statistical
//! gates default to three-sigma rules; deterministic gates reflect the
//! numerical method behind them.

/// Sigma multiplier for all Monte-Carlo mean and covariance comparisons.
pub const SIGMA_RULE: f64 = 3.0;

/// Relative tolerance of the simulator rate-cache coherence invariant.
pub const CACHE_REL_TOL: f64 = 1e-9;

/// Fast-path versus brute-force transition probabilities, exact arithmetic
/// re-associated, so near machine precision.
pub const ORACLE_MATCH_TOL: f64 = 1e-12;

/// Convergence-rate window for the mass error slope over the scale ladder.
/// The law of large numbers predicts -1/2.
pub const LLN_SLOPE_LO: f64 = -0.65;
pub const LLN_SLOPE_HI: f64 = -0.35;

/// Weak-form residual of the grid solver: the strong form is the exact
/// discrete adjoint of the weak quadrature, so only rounding remains.
pub const WEAK_FORM_RESIDUAL_TOL: f64 = 1e-8;

/// Fourth-order self-convergence window for the error ratio under step
/// halving (16 for an exact fourth-order method).
pub const RK4_ORDER_RATIO_LO: f64 = 12.0;
pub const RK4_ORDER_RATIO_HI: f64 = 20.0;

/// Degenerate-case grid mass against the logistic closed form.
pub const LOGISTIC_MATCH_TOL: f64 = 1e-6;

/// Analytic stationary variance `|V(T*) - b/alpha|` at `T* = 20 / (b - d)`.
pub const OU_VARIANCE_TOL: f64 = 1e-4;

/// Grid Lyapunov flow against the scalar variance in the degenerate case.
pub const OU_CROSS_CHECK_TOL: f64 = 1e-6;

/// Semimartingale reconstruction residual (quadrature error budget).
pub const RECONSTRUCTION_TOL: f64 = 1e-6;

/// Moment gates for the Gaussianity of fluctuation samples at 500
/// replicas (about 2.3 asymptotic standard errors each).
pub const SKEWNESS_MAX: f64 = 0.25;
pub const EXCESS_KURTOSIS_MAX: f64 = 0.5;

/// Significance level of goodness-of-fit tests (chi-square, KS).
pub const GOF_SIGNIFICANCE: f64 = 0.01;

/// Eigenvalue floor for covariance positive semidefiniteness (roundoff).
pub const PSD_EIG_TOL: f64 = 1e-9;

/// Names usable in config tolerance overrides, with their defaults.
pub fn named_defaults() -> Vec<(&'static str, f64)> {
    vec![
        ("sigma_rule", SIGMA_RULE),
        ("lln_slope_lo", LLN_SLOPE_LO),
        ("lln_slope_hi", LLN_SLOPE_HI),
        ("weak_form_residual", WEAK_FORM_RESIDUAL_TOL),
        ("rk4_order_ratio_lo", RK4_ORDER_RATIO_LO),
        ("rk4_order_ratio_hi", RK4_ORDER_RATIO_HI),
        ("logistic_match", LOGISTIC_MATCH_TOL),
        ("ou_variance", OU_VARIANCE_TOL),
        ("ou_cross_check", OU_CROSS_CHECK_TOL),
        ("reconstruction", RECONSTRUCTION_TOL),
        ("skewness_max", SKEWNESS_MAX),
        ("excess_kurtosis_max", EXCESS_KURTOSIS_MAX),
        ("gof_significance", GOF_SIGNIFICANCE),
    ]
}
