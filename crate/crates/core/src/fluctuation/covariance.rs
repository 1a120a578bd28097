//! Limit covariance of the fluctuation field.
//!
//! The limiting fluctuation solves a linear Langevin equation in a
//! deterministic medium: drift operator
//!
//! ```text
//! (A_t phi)(x) = b(x) Int phi(x + z) D(x, dz)
//!              - phi(x) ( d(x) + Int alpha(x, y) X_t(dy) )
//!              - Int alpha(y, x) phi(y) X_t(dy)
//! ```
//!
//! and noise covariance functional
//!
//! ```text
//! <Q_t phi, psi> = Int X_t(dx) [ b(x) Int (phi psi)(x + z) D(x, dz)
//!                + (phi psi)(x) ( d(x) + Int alpha(x, y) X_t(dy) ) ]
//! ```
//!
//! With `K_t(phi, psi) = E <Y_t, phi><Y_t, psi>` represented by a grid
//! matrix acting on test-function values, the covariance solves the
//! differential Lyapunov equation `dK/dt = A^T K + K A + Q`, integrated here
//! with fixed-step fourth-order stepping and symmetrization.

use nalgebra::DMatrix;

use crate::meanfield::{Discretization, MeanfieldPath, TraitGrid};

use super::FluctuationError;

/// Grid matrix of the drift operator at medium density `u`.
///
/// Rows index the evaluation node, columns the test-function values, so
/// `(A v)_p` approximates `(A_t phi)(x_p)` for `v = phi` on the nodes. All
/// three terms are present, including the nonlocal adjoint-competition one.
pub fn operator_a(disc: &Discretization, u: &[f64]) -> DMatrix<f64> {
    let grid = disc.grid();
    let n = grid.len();
    let w = grid.weights();
    let b = disc.birth_values();
    let d = disc.death_values();
    let (f, g) = disc.kernel_factors();
    let alpha_u = disc.alpha_of(u);

    let mut a = DMatrix::<f64>::zeros(n, n);

    // Dispersal-averaged birth term b(x) (D phi)(x).
    match disc_dispersal_rows(disc) {
        None => {
            for p in 0..n {
                a[(p, p)] += b[p];
            }
        }
        Some(rows) => {
            for p in 0..n {
                for q in 0..n {
                    a[(p, q)] += b[p] * w[q] * rows[p * n + q];
                }
            }
        }
    }

    // Local death and competition pressure.
    for p in 0..n {
        a[(p, p)] -= d[p] + alpha_u[p];
    }

    // Adjoint competition: -(sum_q w_q alpha(x_q, x_p) u_q phi_q), separable
    // as -(sum_k g_k(x_p) * w_q f_k(x_q) u_q).
    for k in 0..f.len() {
        for q in 0..n {
            let col = w[q] * f[k][q] * u[q];
            if col == 0.0 {
                continue;
            }
            for p in 0..n {
                a[(p, q)] -= g[k][p] * col;
            }
        }
    }
    a
}

/// Grid matrix of the noise covariance at medium density `u`.
///
/// Birth and death jumps act at single points, so the bilinear form is
/// diagonal on grid values: `<Q phi, psi> = sum_p Q_pp phi_p psi_p`.
pub fn operator_q(disc: &Discretization, u: &[f64]) -> DMatrix<f64> {
    let grid = disc.grid();
    let n = grid.len();
    let w = grid.weights();
    let b = disc.birth_values();
    let d = disc.death_values();
    let alpha_u = disc.alpha_of(u);

    // Birth deposition density sum_r w_r b_r u_r m(x_r, x_p - x_r).
    let dep: Vec<f64> = match disc_dispersal_rows(disc) {
        None => (0..n).map(|p| b[p] * u[p]).collect(),
        Some(rows) => (0..n)
            .map(|p| {
                (0..n)
                    .map(|r| w[r] * b[r] * u[r] * rows[r * n + p])
                    .sum::<f64>()
            })
            .collect(),
    };

    let mut q = DMatrix::<f64>::zeros(n, n);
    for p in 0..n {
        q[(p, p)] = w[p] * (dep[p] + u[p] * (d[p] + alpha_u[p])).max(0.0);
    }
    q
}

fn disc_dispersal_rows(disc: &Discretization) -> Option<&[f64]> {
    disc.dispersal_rows()
}

/// Covariance path of the Lyapunov flow, one symmetric matrix per output
/// time.
#[derive(Debug, Clone)]
pub struct CovariancePath {
    pub times: Vec<f64>,
    pub matrices: Vec<DMatrix<f64>>,
}

impl CovariancePath {
    /// Project onto a family of test functions given by their grid values:
    /// `K_ij = v_i^T K v_j`.
    pub fn project(&self, vectors: &[Vec<f64>]) -> Vec<DMatrix<f64>> {
        self.matrices
            .iter()
            .map(|k| project_covariance(k, vectors))
            .collect()
    }
}

pub fn project_covariance(k: &DMatrix<f64>, vectors: &[Vec<f64>]) -> DMatrix<f64> {
    let m = vectors.len();
    let mut out = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        let kv = k * DMatrix::from_column_slice(vectors[i].len(), 1, &vectors[i]);
        for j in 0..m {
            out[(i, j)] = vectors[j]
                .iter()
                .zip(kv.column(0).iter())
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    // Exact symmetry of the projection.
    for i in 0..m {
        for j in 0..i {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(k: &DMatrix<f64>) -> f64 {
    let sym = nalgebra::SymmetricEigen::new(k.clone());
    sym.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Integrate `dK/dt = A(t)^T K + K A(t) + Q(t)` with fourth-order stepping.
///
/// `ops` must supply the operator pair at `t`, `t + h/2` and `t + h` for
/// every internal step; outputs land exactly on multiples of the internal
/// step. The iterate is symmetrized every step and checked for positive
/// semidefiniteness at every output time.
pub fn lyapunov_integrate<F>(
    k0: DMatrix<f64>,
    mut ops: F,
    t_end: f64,
    dt: f64,
    output_times: &[f64],
) -> Result<CovariancePath, FluctuationError>
where
    F: FnMut(f64) -> (DMatrix<f64>, DMatrix<f64>),
{
    if !(dt > 0.0) || t_end < 0.0 {
        return Err(FluctuationError::BadInput(
            "need dt > 0 and t_end >= 0".into(),
        ));
    }
    if (k0.transpose() - &k0).amax() > 1e-12 * k0.amax().max(1.0) {
        return Err(FluctuationError::BadInput(
            "initial covariance must be symmetric".into(),
        ));
    }
    let steps = (t_end / dt).ceil().max(0.0) as usize;
    let h = if steps > 0 { t_end / steps as f64 } else { dt };

    let mut out_iter = output_times.iter().peekable();
    let mut path = CovariancePath {
        times: Vec::with_capacity(output_times.len()),
        matrices: Vec::with_capacity(output_times.len()),
    };
    let mut k = k0;
    let mut record =
        |t: f64, k: &DMatrix<f64>, out_iter: &mut std::iter::Peekable<std::slice::Iter<f64>>| {
            while let Some(&&target) = out_iter.peek() {
                if (target - t).abs() <= 1e-9 {
                    let scale = k.amax().max(1.0);
                    let min_eig = min_eigenvalue(k);
                    if min_eig < -1e-6 * scale {
                        return Err(FluctuationError::NotPositiveSemidefinite {
                            time: t,
                            min_eigenvalue: min_eig,
                        });
                    }
                    path.times.push(target);
                    path.matrices.push(k.clone());
                    out_iter.next();
                } else if target < t {
                    return Err(FluctuationError::BadInput(format!(
                        "output time {target} does not align with the step grid"
                    )));
                } else {
                    break;
                }
            }
            Ok(())
        };

    record(0.0, &k, &mut out_iter)?;
    let rhs = |a: &DMatrix<f64>, q: &DMatrix<f64>, k: &DMatrix<f64>| -> DMatrix<f64> {
        a.transpose() * k + k * a + q
    };
    for step in 0..steps {
        let t = step as f64 * h;
        let (a0, q0) = ops(t);
        let (ah, qh) = ops(t + 0.5 * h);
        let (a1, q1) = ops(t + h);
        let k1 = rhs(&a0, &q0, &k);
        let k2 = rhs(&ah, &qh, &(&k + &k1 * (0.5 * h)));
        let k3 = rhs(&ah, &qh, &(&k + &k2 * (0.5 * h)));
        let k4 = rhs(&a1, &q1, &(&k + &k3 * h));
        k += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        k = (&k + &k.transpose()) * 0.5;
        record((step + 1) as f64 * h, &k, &mut out_iter)?;
    }
    if out_iter.peek().is_some() {
        return Err(FluctuationError::BadInput(
            "output times extend beyond the integration horizon".into(),
        ));
    }
    Ok(path)
}

/// Convenience route for a model: co-integrates the medium on the half-step
/// lattice and drives the Lyapunov flow with stage-consistent operators.
pub fn lyapunov_for_model(
    disc: &Discretization,
    u0: &[f64],
    k0: DMatrix<f64>,
    t_end: f64,
    dt: f64,
    output_times: &[f64],
) -> Result<CovariancePath, FluctuationError> {
    let steps = (t_end / dt).ceil().max(1.0) as usize;
    let h = t_end / steps as f64;
    let half_times: Vec<f64> = (0..=2 * steps).map(|i| i as f64 * 0.5 * h).collect();
    let mf = disc.integrate(u0, 0.5 * h, &half_times)?;
    let ops = |t: f64| {
        let idx = (t / (0.5 * h)).round() as usize;
        debug_assert!((half_times[idx] - t).abs() <= 1e-9);
        let u = mf.state_at(idx);
        (operator_a(disc, u), operator_q(disc, u))
    };
    lyapunov_integrate(k0, ops, t_end, h, output_times)
}

/// Initial fluctuation covariance for independently sampled initial
/// populations.
///
/// With `round(n M0)` points drawn iid from the normalized law `X0 / M0`,
/// the initial field has covariance
/// `K0(phi, psi) = <X0, phi psi> - <X0, phi><X0, psi> / <X0, 1>`.
/// This is our own convention for the sampling design used here (the
/// quantized mode has `K0 = 0`); the derivation is spelled out in the
/// repository documentation.
pub fn initial_covariance_iid(grid: &TraitGrid, u0: &[f64]) -> DMatrix<f64> {
    let n = grid.len();
    let w = grid.weights();
    let mass: f64 = grid.mass(u0);
    let mut k = DMatrix::<f64>::zeros(n, n);
    let wu: Vec<f64> = (0..n).map(|p| w[p] * u0[p]).collect();
    for p in 0..n {
        k[(p, p)] = wu[p];
    }
    for p in 0..n {
        for q in 0..n {
            k[(p, q)] -= wu[p] * wu[q] / mass;
        }
    }
    k
}

/// Convenience: covariance path evaluated from a stored mean-field path at
/// matching half-step times (`path.times[2i]` are the step boundaries).
pub fn ops_from_path<'a>(
    disc: &'a Discretization,
    mf: &'a MeanfieldPath,
) -> impl FnMut(f64) -> (DMatrix<f64>, DMatrix<f64>) + 'a {
    let h_half = if mf.times.len() > 1 {
        mf.times[1] - mf.times[0]
    } else {
        1.0
    };
    move |t: f64| {
        let idx = (t / h_half).round() as usize;
        debug_assert!(
            idx < mf.times.len() && (mf.times[idx] - t).abs() <= 1e-9,
            "time {t} off the stored lattice"
        );
        let u = mf.state_at(idx);
        (operator_a(disc, u), operator_q(disc, u))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::Discretization;
    use crate::model::{
        DispersalKernel, KernelTerm, ModelSpec, ScalarField, SeparableKernel, TraitSpace,
    };
    use crate::sim::InitialCondition;
    use approx::assert_relative_eq;

    fn degenerate_disc(nodes: usize) -> Discretization {
        let spec = ModelSpec::degenerate(2.0, 1.0, 1.0, 1000).unwrap();
        Discretization::new(&spec, nodes).unwrap()
    }

    #[test]
    fn operator_a_degenerate_constant_on_ones() {
        // Spike medium of mass xi: A 1 = (b - d - 2 alpha xi) 1.
        let disc = degenerate_disc(9);
        let xi = 0.6;
        let u = disc
            .initial_density(&InitialCondition::point_mass(xi, vec![0.5]))
            .unwrap();
        let a = operator_a(&disc, &u);
        let ones = vec![1.0; disc.grid().len()];
        let av = &a * DMatrix::from_column_slice(ones.len(), 1, &ones);
        let expect = 2.0 - 1.0 - 2.0 * 1.0 * xi;
        for p in 0..ones.len() {
            assert_relative_eq!(av[(p, 0)], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn operator_a_without_medium_drops_competition() {
        let spec = ModelSpec::new(
            TraitSpace::unit_interval(),
            ScalarField::constant(2.0),
            ScalarField::constant(1.0),
            SeparableKernel::constant(1.0),
            DispersalKernel::TruncatedGaussian { sigma: 0.2 },
            100,
        )
        .unwrap();
        let disc = Discretization::new(&spec, 65).unwrap();
        let u = vec![0.0; disc.grid().len()];
        let a = operator_a(&disc, &u);
        // On phi = 1: (D 1)(x) = 1 by normalization up to grid quadrature,
        // so A 1 = b - d.
        let ones = vec![1.0; disc.grid().len()];
        let av = &a * DMatrix::from_column_slice(ones.len(), 1, &ones);
        for p in 0..ones.len() {
            assert_relative_eq!(av[(p, 0)], 1.0, epsilon = 1e-3);
        }
    }

    #[test]
    fn operator_a_asymmetry_is_dispersal_only() {
        // For symmetric alpha, the X_t-weighted pairing of A is symmetric
        // except for the dispersal-average term.
        let spec = ModelSpec::new(
            TraitSpace::unit_interval(),
            ScalarField::GaussianBump {
                center: vec![0.4],
                width: 0.25,
                height: 0.6,
                floor: 0.9,
            },
            ScalarField::constant(0.5),
            SeparableKernel::new(vec![KernelTerm {
                f: ScalarField::Affine {
                    slope: vec![0.8],
                    intercept: 0.3,
                },
                g: ScalarField::Affine {
                    slope: vec![0.8],
                    intercept: 0.3,
                },
            }]),
            DispersalKernel::TruncatedGaussian { sigma: 0.12 },
            100,
        )
        .unwrap();
        let disc = Discretization::new(&spec, 33).unwrap();
        let grid = disc.grid();
        let n = grid.len();
        let u: Vec<f64> = (0..n)
            .map(|p| 0.5 + 0.2 * (2.5 * grid.point(p)[0]).cos())
            .collect();
        let a = operator_a(&disc, &u);

        let phi: Vec<f64> = (0..n).map(|p| grid.point(p)[0]).collect();
        let psi: Vec<f64> = (0..n).map(|p| grid.point(p)[0].powi(2) + 0.3).collect();
        let pair = |lhs: &[f64], rhs: &[f64]| -> f64 {
            // <f, g>_{X_t} with the medium as weight.
            (0..n)
                .map(|p| grid.weights()[p] * u[p] * lhs[p] * rhs[p])
                .sum()
        };
        let apply = |v: &[f64]| -> Vec<f64> {
            let m = &a * DMatrix::from_column_slice(n, 1, v);
            (0..n).map(|p| m[(p, 0)]).collect()
        };
        let a_phi = apply(&phi);
        let a_psi = apply(&psi);
        let total_asym = pair(&a_phi, &psi) - pair(&a_psi, &phi);

        let d_phi = disc.dispersal_average(&phi);
        let d_psi = disc.dispersal_average(&psi);
        let b = disc.birth_values();
        let bd_phi: Vec<f64> = (0..n).map(|p| b[p] * d_phi[p]).collect();
        let bd_psi: Vec<f64> = (0..n).map(|p| b[p] * d_psi[p]).collect();
        let dispersal_asym = pair(&bd_phi, &psi) - pair(&bd_psi, &phi);

        assert!(
            (total_asym - dispersal_asym).abs() <= 1e-10,
            "asymmetry {total_asym} vs dispersal part {dispersal_asym}"
        );
    }

    #[test]
    fn operator_q_vanishes_without_medium() {
        let disc = degenerate_disc(9);
        let u = vec![0.0; disc.grid().len()];
        let q = operator_q(&disc, &u);
        assert!(q.amax() == 0.0);
    }

    #[test]
    fn operator_q_degenerate_total() {
        // <Q 1, 1> = (b + d + alpha xi) xi.
        let disc = degenerate_disc(9);
        let xi = 0.8;
        let u = disc
            .initial_density(&InitialCondition::point_mass(xi, vec![0.5]))
            .unwrap();
        let q = operator_q(&disc, &u);
        let total: f64 = (0..disc.grid().len()).map(|p| q[(p, p)]).sum();
        assert_relative_eq!(total, (2.0 + 1.0 + xi) * xi, epsilon = 1e-12);
    }

    #[test]
    fn operator_q_is_psd_on_random_vectors() {
        let disc = degenerate_disc(17);
        let u: Vec<f64> = (0..disc.grid().len()).map(|p| 0.2 + 0.01 * p as f64).collect();
        let q = operator_q(&disc, &u);
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(8);
        for _ in 0..100 {
            let x: Vec<f64> = (0..disc.grid().len())
                .map(|_| rng.random::<f64>() - 0.5)
                .collect();
            let xv = DMatrix::from_column_slice(x.len(), 1, &x);
            let quad = (xv.transpose() * &q * &xv)[(0, 0)];
            assert!(quad >= 0.0, "x^T Q x = {quad}");
        }
    }

    #[test]
    fn lyapunov_zero_drift_accumulates_noise_linearly() {
        let n = 4;
        let q = DMatrix::<f64>::identity(n, n) * 0.7;
        let ops = |_t: f64| (DMatrix::<f64>::zeros(n, n), q.clone());
        let path = lyapunov_integrate(
            DMatrix::zeros(n, n),
            ops,
            2.0,
            0.01,
            &[0.0, 1.0, 2.0],
        )
        .unwrap();
        assert_relative_eq!(path.matrices[1][(0, 0)], 0.7, epsilon = 1e-10);
        assert_relative_eq!(path.matrices[2][(2, 2)], 1.4, epsilon = 1e-10);
        assert_relative_eq!(path.matrices[2][(0, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_scalar_balance() {
        // dK = -2aK + q settles at q / 2a.
        let a0 = 1.5;
        let q0 = 0.6;
        let ops = |_t: f64| {
            (
                DMatrix::from_element(1, 1, -a0),
                DMatrix::from_element(1, 1, q0),
            )
        };
        let path = lyapunov_integrate(
            DMatrix::zeros(1, 1),
            ops,
            12.0,
            0.005,
            &[0.0, 12.0],
        )
        .unwrap();
        assert_relative_eq!(path.matrices[1][(0, 0)], q0 / (2.0 * a0), epsilon = 1e-8);
    }

    #[test]
    fn lyapunov_scalar_ou_stationary_variance() {
        // a = b - d, q = 2b(b - d)/alpha gives K(inf) = b / alpha.
        let (b, d, al) = (2.0, 1.0, 1.0);
        let a0 = b - d;
        let q0 = 2.0 * b * (b - d) / al;
        let ops = |_t: f64| {
            (
                DMatrix::from_element(1, 1, -a0),
                DMatrix::from_element(1, 1, q0),
            )
        };
        let path = lyapunov_integrate(DMatrix::zeros(1, 1), ops, 20.0, 0.01, &[0.0, 20.0]).unwrap();
        assert_relative_eq!(path.matrices[1][(0, 0)], b / al, epsilon = 1e-7);
    }

    #[test]
    fn lyapunov_degenerate_grid_reproduces_scalar_variance() {
        // The grid machinery projected on phi = 1 must agree with the
        // closed-form scalar variance of the degenerate system.
        let disc = degenerate_disc(9);
        let xi0 = 0.5;
        let u0 = disc
            .initial_density(&InitialCondition::point_mass(xi0, vec![0.5]))
            .unwrap();
        let out = [0.0, 0.5, 1.0, 2.0, 5.0, 10.0];
        let path =
            lyapunov_for_model(&disc, &u0, DMatrix::zeros(9, 9), 10.0, 0.002, &out).unwrap();
        let ones = vec![vec![1.0; 9]];
        let projected = path.project(&ones);
        let params = crate::ou1d::OuParams::new(2.0, 1.0, 1.0, xi0, 0.0).unwrap();
        for (idx, &t) in out.iter().enumerate() {
            let v = crate::ou1d::variance(&params, t);
            assert!(
                (projected[idx][(0, 0)] - v).abs() <= 1e-6,
                "t = {t}: grid {} vs scalar {v}",
                projected[idx][(0, 0)]
            );
        }
    }

    #[test]
    fn iid_initial_covariance_matches_sampling() {
        // Monte-Carlo oracle: empirical covariance of <Y0, phi> under iid
        // placement should match the closed form within three jackknife SE.
        use crate::model::Observable;
        use crate::sim::{init_population, InitMode};
        use rand::SeedableRng;

        let spec = ModelSpec::degenerate(2.0, 1.0, 1.0, 2000).unwrap();
        let disc = Discretization::new(&spec, 33).unwrap();
        let init = InitialCondition::uniform(1.0, InitMode::Iid);
        let u0 = disc.initial_density(&init).unwrap();
        let k0 = initial_covariance_iid(disc.grid(), &u0);
        let phis = [Observable::monomial_1d(1), Observable::monomial_1d(2)];
        let vectors: Vec<Vec<f64>> = phis.iter().map(|p| disc.observable_values(p)).collect();
        let k0_proj = project_covariance(&k0, &vectors);

        let reps = 600;
        let mut data = Vec::with_capacity(reps);
        for r in 0..reps {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1000 + r as u64);
            let pop = init_population(&spec, &init, &mut rng).unwrap();
            let sqrt_n = (spec.scale() as f64).sqrt();
            let row: Vec<f64> = phis
                .iter()
                .zip([0.5, 1.0 / 3.0])
                .map(|(phi, exact)| sqrt_n * (pop.measure(&spec, phi) - exact))
                .collect();
            data.push(row);
        }
        let emp = crate::stats::sample_covariance(&data);
        let se = crate::stats::jackknife_covariance_se(&data);
        for i in 0..2 {
            for j in 0..2 {
                let diff = (emp[(i, j)] - k0_proj[(i, j)]).abs();
                assert!(
                    diff <= 3.0 * se[(i, j)],
                    "entry ({i}, {j}): emp {} vs k0 {} (3 SE = {})",
                    emp[(i, j)],
                    k0_proj[(i, j)],
                    3.0 * se[(i, j)]
                );
            }
        }
    }
}
