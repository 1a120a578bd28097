//! Degenerate single-site system in closed form.
//!
//! With no dispersal and every individual at one trait value, the rescaled
//! mass follows the logistic flow `xi' = (b - d - alpha xi) xi` and the
//! fluctuation around it is a time-inhomogeneous Ornstein-Uhlenbeck process
//!
//! ```text
//! d eta_t = -theta_t eta_t dt + sigma_t dB_t,
//! theta_t = -(b - d - 2 alpha xi_t),
//! sigma_t = sqrt((b + d + alpha xi_t) xi_t).
//! ```
//!
//! Along the flow `theta_t -> b - d > 0` and `sigma_t^2 -> 2b(b - d)/alpha`,
//! so the fluctuation settles into the Gaussian stationary law with variance
//! `b / alpha` whatever the death rate is.

use nalgebra::Complex;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::meanfield::{logistic_closed_form, logistic_integral};
use crate::quad::adaptive_simpson;

/// Absolute tolerance of the variance quadrature.
const VARIANCE_QUAD_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum OuError {
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("time step too coarse: dt * |theta| = {0} must stay below 0.1")]
    CoarseStep(f64),
}

/// Scalar rates of the degenerate system at the fixed trait point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuParams {
    pub birth: f64,
    pub death: f64,
    pub alpha: f64,
    pub xi0: f64,
    pub eta0: f64,
}

impl OuParams {
    pub fn new(birth: f64, death: f64, alpha: f64, xi0: f64, eta0: f64) -> Result<Self, OuError> {
        if !(birth > 0.0 && death > 0.0 && alpha > 0.0) {
            return Err(OuError::BadParams(
                "birth, death and alpha must be positive".into(),
            ));
        }
        if birth <= death {
            return Err(OuError::BadParams("need birth > death".into()));
        }
        if xi0 < 0.0 {
            return Err(OuError::BadParams("xi0 must be nonnegative".into()));
        }
        Ok(Self {
            birth,
            death,
            alpha,
            xi0,
            eta0,
        })
    }

    /// Stable equilibrium `(b - d) / alpha` of the mass flow.
    pub fn equilibrium(&self) -> f64 {
        (self.birth - self.death) / self.alpha
    }

    /// Stationary fluctuation variance `b / alpha`.
    pub fn stationary_variance(&self) -> f64 {
        self.birth / self.alpha
    }

    pub fn xi(&self, t: f64) -> f64 {
        logistic_closed_form(self.xi0, self.birth, self.death, self.alpha, t)
    }

    /// Drift coefficient `theta_t = -(b - d - 2 alpha xi_t)`.
    pub fn theta(&self, t: f64) -> f64 {
        -(self.birth - self.death - 2.0 * self.alpha * self.xi(t))
    }

    /// Noise amplitude `sigma_t = sqrt((b + d + alpha xi_t) xi_t)`.
    pub fn sigma(&self, t: f64) -> f64 {
        let xi = self.xi(t);
        ((self.birth + self.death + self.alpha * xi) * xi).sqrt()
    }

    /// `Int_u^t theta_v dv` in closed form through the logistic integral.
    pub fn theta_integral(&self, u: f64, t: f64) -> f64 {
        let r = self.birth - self.death;
        let xi_int = logistic_integral(self.xi0, self.birth, self.death, self.alpha, t)
            - logistic_integral(self.xi0, self.birth, self.death, self.alpha, u);
        -r * (t - u) + 2.0 * self.alpha * xi_int
    }
}

/// Coefficient triple at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuCoefficients {
    pub xi: f64,
    pub theta: f64,
    pub sigma: f64,
}

pub fn coefficients(p: &OuParams, t: f64) -> OuCoefficients {
    OuCoefficients {
        xi: p.xi(t),
        theta: p.theta(t),
        sigma: p.sigma(t),
    }
}

/// Full state of the fluctuation law at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuState {
    pub t: f64,
    pub xi: f64,
    pub theta: f64,
    pub sigma: f64,
    pub variance: f64,
}

pub fn state(p: &OuParams, t: f64) -> OuState {
    let c = coefficients(p, t);
    OuState {
        t,
        xi: c.xi,
        theta: c.theta,
        sigma: c.sigma,
        variance: variance(p, t),
    }
}

/// Fluctuation variance `V_t = Int_0^t sigma_u^2 exp(-2 Int_u^t theta) du`
/// by adaptive quadrature over the closed-form exponents.
pub fn variance(p: &OuParams, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if t == 0.0 || p.xi0 == 0.0 {
        return 0.0;
    }
    adaptive_simpson(
        |u| {
            let s = p.sigma(u);
            s * s * (-2.0 * p.theta_integral(u, t)).exp()
        },
        0.0,
        t,
        VARIANCE_QUAD_TOL,
    )
}

/// The same variance through the scalar flow `V' = -2 theta_t V + sigma_t^2`
/// integrated with fixed-step fourth-order stepping. Cross-check route.
pub fn variance_ode(p: &OuParams, t: f64, dt: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let steps = (t / dt).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let mut v = 0.0;
    let mut s = 0.0;
    let f = |time: f64, v: f64| {
        let sig = p.sigma(time);
        -2.0 * p.theta(time) * v + sig * sig
    };
    for _ in 0..steps {
        let k1 = f(s, v);
        let k2 = f(s + 0.5 * h, v + 0.5 * h * k1);
        let k3 = f(s + 0.5 * h, v + 0.5 * h * k2);
        let k4 = f(s + h, v + h * k3);
        v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        s += h;
    }
    v
}

/// Characteristic function of `eta_t` started from the deterministic `eta0`:
///
/// ```text
/// E[e^{iz eta_t}] = exp( iz e^{-Int_0^t theta} eta0 - z^2 V_t / 2 )
/// ```
pub fn char_fn(p: &OuParams, z: f64, t: f64) -> Complex<f64> {
    let decay = (-p.theta_integral(0.0, t)).exp();
    let v = variance(p, t);
    Complex::new(-0.5 * z * z * v, z * decay * p.eta0).exp()
}

/// Euler-Maruyama path of the fluctuation on a uniform step grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OuPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn simulate_ou<R: Rng>(
    p: &OuParams,
    horizon: f64,
    dt: f64,
    rng: &mut R,
) -> Result<OuPath, OuError> {
    if !(dt > 0.0 && horizon >= 0.0) {
        return Err(OuError::BadParams("need dt > 0 and horizon >= 0".into()));
    }
    // theta is monotone along the logistic flow, so its extremes sit at the
    // endpoints (with b - d the limiting value).
    let theta_max = p
        .theta(0.0)
        .abs()
        .max(p.theta(horizon).abs())
        .max(p.birth - p.death);
    if dt * theta_max >= 0.1 {
        return Err(OuError::CoarseStep(dt * theta_max));
    }
    let steps = (horizon / dt).ceil() as usize;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut times = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    let mut eta = p.eta0;
    let mut t = 0.0;
    times.push(t);
    values.push(eta);
    for step in 0..steps {
        let h = (horizon - t).min(dt);
        let c = coefficients(p, t);
        eta += -c.theta * eta * h + c.sigma * h.sqrt() * normal.sample(rng);
        t = if step + 1 == steps { horizon } else { t + h };
        times.push(t);
        values.push(eta);
    }
    Ok(OuPath { times, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn standard() -> OuParams {
        OuParams::new(2.0, 1.0, 1.0, 0.5, 0.0).unwrap()
    }

    #[test]
    fn coefficients_at_equilibrium() {
        // Started at the stable point: theta freezes at b - d and sigma^2 at
        // 2b(b - d)/alpha.
        let p = OuParams::new(2.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        for &t in &[0.0, 0.5, 3.0, 17.0] {
            let c = coefficients(&p, t);
            assert_relative_eq!(c.theta, 1.0, epsilon = 1e-12);
            assert_relative_eq!(c.sigma * c.sigma, 4.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_start_is_noiseless_instability() {
        let p = OuParams::new(2.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        let c = coefficients(&p, 2.0);
        assert_eq!(c.sigma, 0.0);
        assert_relative_eq!(c.theta, -1.0);
    }

    #[test]
    fn coefficients_substitution() {
        let p = standard();
        let c = coefficients(&p, 0.0);
        assert_relative_eq!(c.theta, 0.0, epsilon = 1e-12);
        assert_relative_eq!(c.sigma * c.sigma, 1.75, epsilon = 1e-12);
    }

    #[test]
    fn variance_zero_at_origin() {
        assert_eq!(variance(&standard(), 0.0), 0.0);
    }

    #[test]
    fn variance_constant_coefficient_closed_form() {
        // Equilibrium start: V_t = (b/alpha)(1 - e^{-2(b-d)t}).
        let p = OuParams::new(2.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        for &t in &[0.1f64, 0.5, 1.0, 3.0, 8.0] {
            let exact = 2.0 * (1.0 - (-2.0 * t).exp());
            assert_relative_eq!(variance(&p, t), exact, epsilon = 1e-9);
        }
    }

    #[test]
    fn variance_settles_at_stationary_value() {
        for (b, d, a, xi0) in [
            (2.0, 1.0, 1.0, 0.5),
            (2.0, 1.0, 1.0, 2.0),
            (1.5, 0.5, 2.0, 0.3),
            (3.0, 1.0, 0.5, 1.0),
            (2.5, 2.0, 1.0, 0.7),
        ] {
            let p = OuParams::new(b, d, a, xi0, 0.0).unwrap();
            let t_star = 20.0 / (b - d);
            let v = variance(&p, t_star);
            assert!(
                (v - b / a).abs() <= 1e-4,
                "V({t_star}) = {v} vs {} for ({b}, {d}, {a}, {xi0})",
                b / a
            );
        }
    }

    #[test]
    fn quadrature_and_ode_variances_agree() {
        let p = standard();
        for &t in &[0.25, 1.0, 3.0, 10.0] {
            let vq = variance(&p, t);
            let vo = variance_ode(&p, t, 1e-3);
            assert!(
                (vq - vo).abs() <= 1e-8,
                "t = {t}: quadrature {vq} vs flow {vo}"
            );
        }
    }

    #[test]
    fn char_fn_basics() {
        let p = standard();
        assert_relative_eq!(char_fn(&p, 0.0, 2.0).re, 1.0);
        assert_relative_eq!(char_fn(&p, 0.0, 2.0).im, 0.0);
        // Centered start: real-valued Gaussian transform.
        let c = char_fn(&p, 1.3, 2.0);
        assert_relative_eq!(c.im, 0.0, epsilon = 1e-14);
        assert_relative_eq!(c.re, (-0.5 * 1.3f64.powi(2) * variance(&p, 2.0)).exp());
        for &z in &[-4.0, -0.5, 0.7, 11.0] {
            assert!(char_fn(&p, z, 1.0).norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn char_fn_curvature_matches_variance() {
        // Second derivative of -log E[e^{iz eta}] at z = 0 is V_t.
        let p = standard();
        let t = 1.7;
        let h = 1e-3;
        let lc = |z: f64| -(char_fn(&p, z, t).re.ln());
        let fd = (lc(h) - 2.0 * lc(0.0) + lc(-h)) / (h * h);
        assert!(
            (fd - variance(&p, t)).abs() <= 1e-6,
            "fd {fd} vs {}",
            variance(&p, t)
        );
    }

    #[test]
    fn noiseless_path_is_exponential_growth() {
        let p = OuParams::new(2.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let path = simulate_ou(&p, 1.0, 1e-4, &mut rng).unwrap();
        let last = *path.values.last().unwrap();
        assert!(
            (last - 1.0f64.exp()).abs() <= 1e-4 * 1.0f64.exp() * 10.0,
            "eta(1) = {last} vs e"
        );
    }

    #[test]
    fn em_variance_matches_analytic() {
        let p = OuParams::new(2.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let t = 5.0;
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let mut finals = Vec::with_capacity(10_000);
        for _ in 0..10_000 {
            let path = simulate_ou(&p, t, 2e-3, &mut rng).unwrap();
            finals.push(*path.values.last().unwrap());
        }
        let sample_var = crate::stats::variance(&finals);
        let exact = variance(&p, t);
        assert!(
            (sample_var - exact).abs() <= 0.05 * exact,
            "sample {sample_var} vs {exact}"
        );
    }

    #[test]
    fn same_seed_same_path() {
        let p = standard();
        let mut a = ChaCha12Rng::seed_from_u64(3);
        let mut b = ChaCha12Rng::seed_from_u64(3);
        let pa = simulate_ou(&p, 2.0, 1e-2, &mut a).unwrap();
        let pb = simulate_ou(&p, 2.0, 1e-2, &mut b).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn coarse_step_rejected() {
        let p = standard();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert!(matches!(
            simulate_ou(&p, 1.0, 0.5, &mut rng),
            Err(OuError::CoarseStep(_))
        ));
    }
}
