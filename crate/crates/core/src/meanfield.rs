//! Deterministic large-population limit on a trait grid.
//!
//! The limit measure solves, weakly against smooth test functions,
//!
//! ```text
//! d/dt <X_t, phi> = <X_t, b(.) Int phi(. + z) D(., dz)>
//!                 - <X_t, phi(.) (d(.) + Int alpha(., y) X_t(dy))>
//! ```
//!
//! The grid solver carries the strong density form obtained by duality:
//!
//! ```text
//! du_p/dt = sum_q w_q b(x_q) m(x_q, x_p - x_q) u_q
//!         - u_p ( d(x_p) + sum_q w_q alpha(x_p, x_q) u_q )
//! ```
//!
//! with product-trapezoid quadrature weights `w`. The weak form is the
//! contract; [`weak_form_reference`] recomputes it with raw field
//! evaluations so tests can pin the duality between the two.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ModelSpec, Observable};
use crate::sim::{InitialCondition, SpatialLaw};

/// Default grid resolution per dimension.
pub const DEFAULT_NODES_PER_DIM: usize = 64;

#[derive(Debug, Error)]
pub enum MeanfieldError {
    #[error("grid construction failed: {0}")]
    BadGrid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("time step {dt} fails the stability precheck (limit {limit})")]
    Unstable { dt: f64, limit: f64 },
    #[error("solution diverged: mass {mass} at t = {time} exceeds guard {guard}")]
    Divergence { time: f64, mass: f64, guard: f64 },
    #[error("bad input: {0}")]
    BadInput(String),
}

/// Regular node lattice over the trait box with product trapezoid weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitGrid {
    dim: usize,
    per_dim: usize,
    /// Flat node coordinates, stride `dim`, row-major with the last axis
    /// fastest.
    points: Vec<f64>,
    weights: Vec<f64>,
    volume: f64,
}

impl TraitGrid {
    pub fn regular(spec: &ModelSpec, per_dim: usize) -> Result<Self, MeanfieldError> {
        let space = spec.space();
        let d = space.dim();
        if d > 2 {
            return Err(MeanfieldError::BadGrid(format!(
                "grids support dim <= 2, got {d}"
            )));
        }
        if per_dim < 3 {
            return Err(MeanfieldError::BadGrid(
                "need at least 3 nodes per dimension".into(),
            ));
        }
        let n = per_dim.pow(d as u32);
        let mut points = Vec::with_capacity(n * d);
        let mut weights = Vec::with_capacity(n);
        let h: Vec<f64> = (0..d)
            .map(|a| {
                let (l, u) = space.side(a);
                (u - l) / (per_dim - 1) as f64
            })
            .collect();
        for idx in 0..n {
            let mut rem = idx;
            let mut w = 1.0;
            let mut coord = vec![0.0; d];
            for axis in (0..d).rev() {
                let k = rem % per_dim;
                rem /= per_dim;
                let (l, _) = space.side(axis);
                coord[axis] = l + k as f64 * h[axis];
                let edge = k == 0 || k == per_dim - 1;
                w *= if edge { 0.5 * h[axis] } else { h[axis] };
            }
            points.extend_from_slice(&coord);
            weights.push(w);
        }
        Ok(Self {
            dim: d,
            per_dim,
            points,
            weights,
            volume: space.volume(),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_dim(&self) -> usize {
        self.per_dim
    }

    pub fn point(&self, p: usize) -> &[f64] {
        &self.points[p * self.dim..(p + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Index of the node nearest to `x`.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for p in 0..self.len() {
            let d2: f64 = self
                .point(p)
                .iter()
                .zip(x)
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            if d2 < best_d {
                best_d = d2;
                best = p;
            }
        }
        best
    }

    /// Quadrature of `sum_p w_p u_p phi(x_p)`.
    pub fn integrate_against(&self, u: &[f64], phi: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(u)
            .zip(phi)
            .map(|((w, uv), pv)| w * uv * pv)
            .sum()
    }

    pub fn mass(&self, u: &[f64]) -> f64 {
        self.weights.iter().zip(u).map(|(w, uv)| w * uv).sum()
    }
}

/// Model rates tabulated on a grid, with the dispersal kernel densities for
/// non-degenerate families.
#[derive(Debug, Clone)]
pub struct Discretization {
    spec: ModelSpec,
    grid: TraitGrid,
    birth: Vec<f64>,
    death: Vec<f64>,
    /// Kernel factors per term, each of grid length.
    f: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    /// `m(x_p, x_q - x_p)` row-major in `p`, absent for point mass.
    disp: Option<Vec<f64>>,
}

impl Discretization {
    pub fn new(spec: &ModelSpec, per_dim: usize) -> Result<Self, MeanfieldError> {
        let grid = TraitGrid::regular(spec, per_dim)?;
        let n = grid.len();
        let space = spec.space();
        let mut birth = Vec::with_capacity(n);
        let mut death = Vec::with_capacity(n);
        for p in 0..n {
            birth.push(spec.birth().eval(space, grid.point(p)));
            death.push(spec.death().eval(space, grid.point(p)));
        }
        let m = spec.competition().n_terms();
        let mut f = vec![vec![0.0; n]; m];
        let mut g = vec![vec![0.0; n]; m];
        for p in 0..n {
            let mut fb = vec![0.0; m];
            let mut gb = vec![0.0; m];
            spec.competition().eval_f(space, grid.point(p), &mut fb);
            spec.competition().eval_g(space, grid.point(p), &mut gb);
            for k in 0..m {
                f[k][p] = fb[k];
                g[k][p] = gb[k];
            }
        }
        let disp = if spec.dispersal().is_point_mass() {
            None
        } else {
            let mut k = vec![0.0; n * n];
            for p in 0..n {
                let xp = grid.point(p).to_vec();
                for q in 0..n {
                    let z: Vec<f64> = grid
                        .point(q)
                        .iter()
                        .zip(&xp)
                        .map(|(a, b)| a - b)
                        .collect();
                    k[p * n + q] = spec
                        .dispersal()
                        .density(space, &xp, &z)?
                        .expect("non-degenerate kernel");
                }
            }
            Some(k)
        };
        Ok(Self {
            spec: spec.clone(),
            grid,
            birth,
            death,
            f,
            g,
            disp,
        })
    }

    pub fn grid(&self) -> &TraitGrid {
        &self.grid
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn birth_values(&self) -> &[f64] {
        &self.birth
    }

    pub fn death_values(&self) -> &[f64] {
        &self.death
    }

    pub fn kernel_factors(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.f, &self.g)
    }

    /// Tabulated dispersal density, `rows[p * len + q] = m(x_p, x_q - x_p)`;
    /// absent for the point-mass family.
    pub fn dispersal_rows(&self) -> Option<&[f64]> {
        self.disp.as_deref()
    }

    /// `alpha * u` on the grid: `sum_k f_k(x_p) (sum_q w_q g_k(x_q) u_q)`.
    pub fn alpha_of(&self, u: &[f64]) -> Vec<f64> {
        let n = self.grid.len();
        let w = self.grid.weights();
        let mut out = vec![0.0; n];
        for k in 0..self.f.len() {
            let gu: f64 = (0..n).map(|q| w[q] * self.g[k][q] * u[q]).sum();
            for p in 0..n {
                out[p] += self.f[k][p] * gu;
            }
        }
        out
    }

    /// Dispersal average `(D phi)(x_p) = Int phi(x_p + z) m(x_p, z) dz` of
    /// grid values by quadrature; identity for point mass.
    pub fn dispersal_average(&self, phi: &[f64]) -> Vec<f64> {
        let n = self.grid.len();
        match &self.disp {
            None => phi.to_vec(),
            Some(kmat) => {
                let w = self.grid.weights();
                (0..n)
                    .map(|p| (0..n).map(|q| w[q] * kmat[p * n + q] * phi[q]).sum())
                    .collect()
            }
        }
    }

    /// Strong-form time derivative of the density.
    pub fn rhs(&self, u: &[f64]) -> Vec<f64> {
        let n = self.grid.len();
        let w = self.grid.weights();
        let alpha_u = self.alpha_of(u);
        let mut v = vec![0.0; n];
        match &self.disp {
            None => {
                for p in 0..n {
                    v[p] = self.birth[p] * u[p] - u[p] * (self.death[p] + alpha_u[p]);
                }
            }
            Some(kmat) => {
                // Deposition: children born at q land at p with density
                // m(x_q, x_p - x_q).
                for q in 0..n {
                    let src = w[q] * self.birth[q] * u[q];
                    if src == 0.0 {
                        continue;
                    }
                    for p in 0..n {
                        v[p] += src * kmat[q * n + p];
                    }
                }
                for p in 0..n {
                    v[p] -= u[p] * (self.death[p] + alpha_u[p]);
                }
            }
        }
        v
    }

    /// Grid values of an observable.
    pub fn observable_values(&self, phi: &Observable) -> Vec<f64> {
        (0..self.grid.len())
            .map(|p| phi.eval(self.spec.space(), self.grid.point(p)))
            .collect()
    }

    /// Density for an initial condition; point masses are quantized onto the
    /// nearest node with matched total mass.
    pub fn initial_density(&self, init: &InitialCondition) -> Result<Vec<f64>, MeanfieldError> {
        if !(init.mass > 0.0) {
            return Err(MeanfieldError::BadInput("initial mass must be positive".into()));
        }
        let n = self.grid.len();
        match &init.law {
            SpatialLaw::PointMass { location } => {
                if !self.spec.space().contains(location) {
                    return Err(MeanfieldError::BadInput(format!(
                        "location {location:?} outside the trait space"
                    )));
                }
                let p = self.grid.nearest(location);
                let mut u = vec![0.0; n];
                u[p] = init.mass / self.grid.weights()[p];
                Ok(u)
            }
            SpatialLaw::Uniform => Ok(vec![init.mass / self.grid.volume; n]),
            SpatialLaw::GridDensity { shape, values } => {
                let field = crate::model::ScalarField::GridInterpolant {
                    shape: shape.clone(),
                    values: values.clone(),
                };
                field
                    .check_shape(self.spec.space())
                    .map_err(MeanfieldError::BadInput)?;
                let raw: Vec<f64> = (0..n)
                    .map(|p| field.eval(self.spec.space(), self.grid.point(p)).max(0.0))
                    .collect();
                let total = self.grid.mass(&raw);
                if !(total > 0.0) {
                    return Err(MeanfieldError::BadInput(
                        "grid density has zero mass on the grid".into(),
                    ));
                }
                Ok(raw.iter().map(|v| v * init.mass / total).collect())
            }
        }
    }

    /// Classical fourth-order fixed-step integration, output at `times`.
    ///
    /// `times` must be sorted, start at 0 and the internal step never
    /// exceeds `dt` (segments between outputs are subdivided evenly).
    pub fn integrate(
        &self,
        u0: &[f64],
        dt: f64,
        times: &[f64],
    ) -> Result<MeanfieldPath, MeanfieldError> {
        if times.is_empty() || times[0] != 0.0 {
            return Err(MeanfieldError::BadInput(
                "output times must start at 0".into(),
            ));
        }
        for wnd in times.windows(2) {
            if wnd[1] <= wnd[0] {
                return Err(MeanfieldError::BadInput(
                    "output times must be strictly increasing".into(),
                ));
            }
        }
        if !(dt > 0.0) {
            return Err(MeanfieldError::BadInput("dt must be positive".into()));
        }
        let bounds = self.spec.bounds();
        let mass0 = self.grid.mass(u0);
        let mass_bound = mass0.max(diagonal_equilibrium_bound(self, mass0));
        let guard = 10.0 * mass_bound;
        let stability = dt * (bounds.birth_sup + bounds.death_sup + bounds.alpha_sup * mass_bound);
        if stability >= 0.5 {
            return Err(MeanfieldError::Unstable {
                dt,
                limit: 0.5 / (bounds.birth_sup + bounds.death_sup + bounds.alpha_sup * mass_bound),
            });
        }

        let mut states = Vec::with_capacity(times.len());
        let mut u = u0.to_vec();
        let mut max_clip = 0.0f64;
        states.push(u.clone());
        let mut t = 0.0;
        for &target in &times[1..] {
            let seg = target - t;
            let steps = (seg / dt).ceil().max(1.0) as usize;
            let h = seg / steps as f64;
            for _ in 0..steps {
                rk4_step(self, &mut u, h, &mut max_clip);
            }
            t = target;
            let mass = self.grid.mass(&u);
            if !mass.is_finite() || mass > guard {
                return Err(MeanfieldError::Divergence {
                    time: t,
                    mass,
                    guard,
                });
            }
            states.push(u.clone());
        }
        Ok(MeanfieldPath {
            times: times.to_vec(),
            states,
            max_negative_clip: max_clip,
        })
    }
}

/// Crude logistic equilibrium estimate used only for divergence guards.
fn diagonal_equilibrium_bound(disc: &Discretization, mass0: f64) -> f64 {
    let n = disc.grid.len();
    let mut alpha_diag_min = f64::INFINITY;
    for p in 0..n {
        let mut a = 0.0;
        for k in 0..disc.f.len() {
            a += disc.f[k][p] * disc.g[k][p];
        }
        alpha_diag_min = alpha_diag_min.min(a);
    }
    if alpha_diag_min > 1e-12 {
        disc.spec.bounds().birth_sup / alpha_diag_min
    } else {
        mass0
    }
}

fn rk4_step(disc: &Discretization, u: &mut [f64], h: f64, max_clip: &mut f64) {
    let n = u.len();
    let k1 = disc.rhs(u);
    let mut tmp: Vec<f64> = (0..n).map(|p| u[p] + 0.5 * h * k1[p]).collect();
    let k2 = disc.rhs(&tmp);
    for p in 0..n {
        tmp[p] = u[p] + 0.5 * h * k2[p];
    }
    let k3 = disc.rhs(&tmp);
    for p in 0..n {
        tmp[p] = u[p] + h * k3[p];
    }
    let k4 = disc.rhs(&tmp);
    for p in 0..n {
        u[p] += h / 6.0 * (k1[p] + 2.0 * k2[p] + 2.0 * k3[p] + k4[p]);
        if u[p] < 0.0 {
            *max_clip = max_clip.max(-u[p]);
            u[p] = 0.0;
        }
    }
}

/// Density snapshots of the deterministic limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanfieldPath {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Largest negativity removed by the clip; zero for clean runs.
    pub max_negative_clip: f64,
}

impl MeanfieldPath {
    pub fn state_at(&self, idx: usize) -> &[f64] {
        &self.states[idx]
    }

    /// Index of an exact output time.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-9)
    }

    /// Observable projections in the snapshot-table layout shared with the
    /// simulator paths.
    pub fn project(
        &self,
        disc: &Discretization,
        observables: &[Observable],
    ) -> crate::sim::MeasurePath {
        let labels: Vec<String> = observables.iter().map(Observable::label).collect();
        let vectors: Vec<Vec<f64>> = observables
            .iter()
            .map(|o| disc.observable_values(o))
            .collect();
        let mut values = Vec::with_capacity(self.times.len() * labels.len());
        let mut mass = Vec::with_capacity(self.times.len());
        for u in &self.states {
            mass.push(disc.grid().mass(u));
            for v in &vectors {
                values.push(disc.grid().integrate_against(u, v));
            }
        }
        crate::sim::MeasurePath {
            times: self.times.clone(),
            mass,
            labels,
            values,
        }
    }
}

/// Independent quadrature of the weak form right-hand side:
/// `<u, b (D phi)> - <u, phi (d + alpha u)>`, computed with raw field
/// evaluations and explicit nested loops. Pins the duality of [`Discretization::rhs`].
pub fn weak_form_reference(spec: &ModelSpec, grid: &TraitGrid, u: &[f64], phi: &[f64]) -> f64 {
    let n = grid.len();
    let w = grid.weights();
    let space = spec.space();
    let mut acc = 0.0;
    for q in 0..n {
        let xq = grid.point(q);
        let b = spec.birth().eval(space, xq);
        let d = spec.death().eval(space, xq);
        // Dispersal average of phi at x_q by the same grid quadrature.
        let dphi = if spec.dispersal().is_point_mass() {
            phi[q]
        } else {
            let mut acc_d = 0.0;
            for p in 0..n {
                let z: Vec<f64> = grid.point(p).iter().zip(xq).map(|(a, b)| a - b).collect();
                if let Some(m) = spec.dispersal().density(space, xq, &z).unwrap() {
                    acc_d += w[p] * m * phi[p];
                }
            }
            acc_d
        };
        let mut alpha_u = 0.0;
        for y in 0..n {
            alpha_u += w[y] * spec.competition().eval(space, xq, grid.point(y)) * u[y];
        }
        acc += w[q] * u[q] * (b * dphi - phi[q] * (d + alpha_u));
    }
    acc
}

/// Closed-form logistic flow `xi' = (b - d - alpha xi) xi` started at `xi0`.
pub fn logistic_closed_form(xi0: f64, b: f64, d: f64, alpha: f64, t: f64) -> f64 {
    debug_assert!(xi0 >= 0.0 && b > d && alpha > 0.0);
    if xi0 == 0.0 {
        return 0.0;
    }
    let eq = (b - d) / alpha;
    eq / (1.0 + (eq / xi0 - 1.0) * (-(b - d) * t).exp())
}

/// `Int_0^t xi_s ds` for the logistic flow, in closed form.
pub fn logistic_integral(xi0: f64, b: f64, d: f64, alpha: f64, t: f64) -> f64 {
    debug_assert!(xi0 >= 0.0 && b > d && alpha > 0.0);
    if xi0 == 0.0 {
        return 0.0;
    }
    let r = b - d;
    let eq = r / alpha;
    let c = eq / xi0 - 1.0;
    // d/dt [eq t + (eq / r) ln(1 + c e^{-rt})] = xi_t
    eq * t + eq / r * (((1.0 + c * (-r * t).exp()) / (1.0 + c)).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DispersalKernel, ScalarField, SeparableKernel, TraitSpace};
    use approx::assert_relative_eq;

    fn degenerate(n: u64) -> ModelSpec {
        ModelSpec::degenerate(2.0, 1.0, 1.0, n).unwrap()
    }

    fn bump_model() -> ModelSpec {
        ModelSpec::new(
            TraitSpace::unit_interval(),
            ScalarField::GaussianBump {
                center: vec![0.5],
                width: 0.2,
                height: 0.7,
                floor: 0.8,
            },
            ScalarField::constant(0.5),
            SeparableKernel::new(vec![crate::model::KernelTerm {
                f: ScalarField::Affine {
                    slope: vec![1.0],
                    intercept: 0.5,
                },
                g: ScalarField::Affine {
                    slope: vec![1.0],
                    intercept: 0.5,
                },
            }]),
            DispersalKernel::TruncatedGaussian { sigma: 0.1 },
            1000,
        )
        .unwrap()
    }

    #[test]
    fn trapezoid_weights_sum_to_volume() {
        let spec = degenerate(10);
        let grid = TraitGrid::regular(&spec, 64).unwrap();
        let total: f64 = grid.weights().iter().sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_density_is_fixed() {
        let disc = Discretization::new(&degenerate(10), 32).unwrap();
        let u = vec![0.0; disc.grid().len()];
        assert!(disc.rhs(&u).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degenerate_uniform_mass_obeys_logistic_drift() {
        // Point-mass dispersal, constant coefficients, uniform density with
        // mass xi: d<u,1>/dt = (b - d) xi - alpha xi^2.
        let disc = Discretization::new(&degenerate(10), 32).unwrap();
        let xi = 0.7;
        let u = vec![xi; disc.grid().len()];
        let v = disc.rhs(&u);
        let dmass = disc.grid().mass(&v);
        assert_relative_eq!(dmass, (2.0 - 1.0) * xi - 1.0 * xi * xi, epsilon = 1e-12);
    }

    #[test]
    fn weak_form_duality_residual() {
        let spec = bump_model();
        let disc = Discretization::new(&spec, 48).unwrap();
        let grid = disc.grid();
        // Smooth positive density.
        let u: Vec<f64> = (0..grid.len())
            .map(|p| 0.4 + 0.3 * (3.0 * grid.point(p)[0]).sin().powi(2))
            .collect();
        let rhs = disc.rhs(&u);
        for degree in 0..5u32 {
            let phi: Vec<f64> = (0..grid.len())
                .map(|p| grid.point(p)[0].powi(degree as i32) + 0.2)
                .collect();
            let lhs = grid.integrate_against(&rhs, &phi);
            let mut uphi = 0.0;
            for p in 0..grid.len() {
                uphi += grid.weights()[p] * u[p] * phi[p];
            }
            let reference = weak_form_reference(&spec, grid, &u, &phi);
            assert!(
                (lhs - reference).abs() <= 1e-8 * (1.0 + uphi.abs()),
                "degree {degree}: {lhs} vs {reference}"
            );
        }
    }

    #[test]
    fn equilibrium_is_stationary() {
        // Any degenerate density with total mass (b-d)/alpha is stationary.
        let disc = Discretization::new(&degenerate(10), 32).unwrap();
        let u0 = vec![1.0; disc.grid().len()];
        let times = [0.0, 1.0, 5.0, 10.0];
        let path = disc.integrate(&u0, 0.01, &times).unwrap();
        for u in &path.states {
            for (a, b) in u.iter().zip(&u0) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn t_zero_returns_initial() {
        let disc = Discretization::new(&degenerate(10), 16).unwrap();
        let u0 = disc
            .initial_density(&InitialCondition::uniform(0.5, crate::sim::InitMode::Quantized))
            .unwrap();
        let path = disc.integrate(&u0, 0.01, &[0.0]).unwrap();
        assert_eq!(path.states.len(), 1);
        assert_eq!(path.states[0], u0);
    }

    #[test]
    fn fourth_order_self_convergence() {
        let spec = bump_model();
        let disc = Discretization::new(&spec, 32).unwrap();
        let u0 = disc
            .initial_density(&InitialCondition::uniform(0.6, crate::sim::InitMode::Quantized))
            .unwrap();
        let horizon = [0.0, 2.0];
        let err = |dt: f64| {
            let coarse = disc.integrate(&u0, dt, &horizon).unwrap();
            let fine = disc.integrate(&u0, dt / 16.0, &horizon).unwrap();
            coarse.states[1]
                .iter()
                .zip(&fine.states[1])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
        };
        let e1 = err(0.02);
        let e2 = err(0.01);
        let ratio = e1 / e2;
        assert!(
            (12.0..=20.0).contains(&ratio),
            "order ratio {ratio} outside [12, 20] (e1 = {e1}, e2 = {e2})"
        );
    }

    #[test]
    fn degenerate_mass_matches_logistic_closed_form() {
        let disc = Discretization::new(&degenerate(10), 16).unwrap();
        let init = InitialCondition::point_mass(0.5, vec![0.5]);
        let u0 = disc.initial_density(&init).unwrap();
        let times: Vec<f64> = (0..=80).map(|i| i as f64 * 0.25).collect();
        let path = disc.integrate(&u0, 0.005, &times).unwrap();
        for (idx, &t) in path.times.iter().enumerate() {
            let grid_mass = disc.grid().mass(&path.states[idx]);
            let exact = logistic_closed_form(0.5, 2.0, 1.0, 1.0, t);
            assert!(
                (grid_mass - exact).abs() < 1e-6,
                "t = {t}: {grid_mass} vs {exact}"
            );
        }
    }

    #[test]
    fn logistic_examples() {
        // Equilibrium start stays put; zero is absorbing.
        assert_relative_eq!(logistic_closed_form(1.0, 2.0, 1.0, 1.0, 7.3), 1.0);
        assert_eq!(logistic_closed_form(0.0, 2.0, 1.0, 1.0, 3.0), 0.0);
        assert_relative_eq!(
            logistic_closed_form(0.5, 2.0, 1.0, 1.0, 3.0f64.ln()),
            0.75,
            epsilon = 1e-12
        );
    }

    #[test]
    fn logistic_matches_ode_oracle() {
        // High-accuracy scalar RK4 of the logistic flow.
        let (xi0, b, d, a) = (0.3, 2.0, 0.5, 1.3);
        let mut xi = xi0;
        let mut t = 0.0;
        let h = 1e-4;
        let f = |x: f64| (b - d - a * x) * x;
        while t < 4.0 - 1e-12 {
            let k1 = f(xi);
            let k2 = f(xi + 0.5 * h * k1);
            let k3 = f(xi + 0.5 * h * k2);
            let k4 = f(xi + h * k3);
            xi += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += h;
        }
        assert_relative_eq!(
            xi,
            logistic_closed_form(xi0, b, d, a, 4.0),
            epsilon = 1e-10
        );
    }

    #[test]
    fn logistic_integral_derivative_is_xi() {
        let (xi0, b, d, a) = (0.4, 2.0, 1.0, 1.5);
        let h = 1e-6;
        for &t in &[0.1, 0.7, 2.0, 9.0] {
            let fd = (logistic_integral(xi0, b, d, a, t + h)
                - logistic_integral(xi0, b, d, a, t - h))
                / (2.0 * h);
            assert_relative_eq!(
                fd,
                logistic_closed_form(xi0, b, d, a, t),
                epsilon = 1e-7
            );
        }
    }

    #[test]
    fn comparison_principle_in_alpha() {
        // Raising alpha pointwise cannot raise the terminal mass.
        for (b, d, xi0) in [(2.0, 1.0, 0.5), (1.5, 0.5, 1.2), (3.0, 1.0, 0.2)] {
            let build = |alpha: f64| {
                let spec = ModelSpec::degenerate(b, d, alpha, 10).unwrap();
                let disc = Discretization::new(&spec, 16).unwrap();
                let u0 = disc
                    .initial_density(&InitialCondition::point_mass(xi0, vec![0.5]))
                    .unwrap();
                let path = disc.integrate(&u0, 0.01, &[0.0, 6.0]).unwrap();
                disc.grid().mass(&path.states[1])
            };
            let low = build(1.0);
            let high = build(1.7);
            assert!(
                high <= low + 1e-12,
                "terminal mass rose with alpha: {low} -> {high}"
            );
        }
    }

    #[test]
    fn stability_precheck_rejects_large_dt() {
        let disc = Discretization::new(&degenerate(10), 16).unwrap();
        let u0 = vec![1.0; disc.grid().len()];
        assert!(matches!(
            disc.integrate(&u0, 10.0, &[0.0, 1.0]),
            Err(MeanfieldError::Unstable { .. })
        ));
    }
}
