//! Exact martingale decomposition of one simulated path.
//!
//! Between jumps the configuration is frozen, so every time integral of a
//! configuration functional is an exact sum of interval lengths times
//! piecewise-constant integrands. Replaying the event log therefore gives,
//! with no quadrature error,
//!
//! ```text
//! M_t(phi) = sqrt(n) [ <X_t, phi> - <X_0, phi>
//!            - Int_0^t ( <X_s, b (D phi)> - <X_s, phi (d + alpha X_s)> ) ds ]
//! ```
//!
//! together with its predictable compensator
//!
//! ```text
//! <M(phi)>_t = Int_0^t ( <X_s, b (D phi^2)> + <X_s, phi^2 (d + alpha X_s)> ) ds
//! ```
//!
//! and the empirical bracket, the running sum of squared jumps
//! `sum phi(x_event)^2 / n`.

use crate::meanfield::{Discretization, MeanfieldPath};
use crate::model::{ModelSpec, Observable};
use crate::quad::{adaptive_simpson, simpson_uniform};
use crate::sim::{EventKind, EventLog};

use super::FluctuationError;

/// Martingale, compensator and bracket sampled at the evaluation times.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingalePath {
    pub times: Vec<f64>,
    pub martingale: Vec<f64>,
    pub compensator: Vec<f64>,
    pub bracket: Vec<f64>,
}

/// Replay state: the configuration with per-point caches of every
/// functional the integrals need.
struct Replay<'a> {
    spec: &'a ModelSpec,
    dim: usize,
    n_terms: usize,
    points: Vec<f64>,
    /// Per point: [phi, dphi, dphi2, b, d] then f_k, g_k.
    cache: Vec<f64>,
    stride: usize,
    // Running sums.
    s_phi: f64,
    s_b_dphi: f64,
    s_d_phi2: f64,
    s_d_phi: f64,
    s_b_dphi2: f64,
    s_phi_f: Vec<f64>,
    s_phi2_f: Vec<f64>,
    s_g: Vec<f64>,
}

impl<'a> Replay<'a> {
    fn new(spec: &'a ModelSpec, phi: &Observable, initial: &[f64]) -> Result<Self, FluctuationError> {
        let dim = spec.dim();
        let n_terms = spec.competition().n_terms();
        let stride = 5 + 2 * n_terms;
        let mut replay = Replay {
            spec,
            dim,
            n_terms,
            points: Vec::new(),
            cache: Vec::new(),
            stride,
            s_phi: 0.0,
            s_b_dphi: 0.0,
            s_d_phi2: 0.0,
            s_d_phi: 0.0,
            s_b_dphi2: 0.0,
            s_phi_f: vec![0.0; n_terms],
            s_phi2_f: vec![0.0; n_terms],
            s_g: vec![0.0; n_terms],
        };
        for chunk in initial.chunks_exact(dim.max(1)) {
            replay.insert(chunk, phi)?;
        }
        Ok(replay)
    }

    fn len(&self) -> usize {
        self.cache.len() / self.stride
    }

    fn insert(&mut self, x: &[f64], phi: &Observable) -> Result<(), FluctuationError> {
        let space = self.spec.space();
        let phi_v = phi.eval(space, x);
        let dphi = dispersal_average_at(self.spec, phi, x, false)?;
        let dphi2 = dispersal_average_at(self.spec, phi, x, true)?;
        let b = self.spec.birth().eval(space, x);
        let d = self.spec.death().eval(space, x);
        let mut f = vec![0.0; self.n_terms];
        let mut g = vec![0.0; self.n_terms];
        self.spec.competition().eval_f(space, x, &mut f);
        self.spec.competition().eval_g(space, x, &mut g);

        self.points.extend_from_slice(x);
        self.cache.extend_from_slice(&[phi_v, dphi, dphi2, b, d]);
        self.cache.extend_from_slice(&f);
        self.cache.extend_from_slice(&g);

        self.s_phi += phi_v;
        self.s_b_dphi += b * dphi;
        self.s_b_dphi2 += b * dphi2;
        self.s_d_phi += d * phi_v;
        self.s_d_phi2 += d * phi_v * phi_v;
        for k in 0..self.n_terms {
            self.s_phi_f[k] += phi_v * f[k];
            self.s_phi2_f[k] += phi_v * phi_v * f[k];
            self.s_g[k] += g[k];
        }
        Ok(())
    }

    fn remove_by_trait(&mut self, x: &[f64]) -> Result<f64, FluctuationError> {
        let d = self.dim;
        let idx = (0..self.len())
            .find(|&i| &self.points[i * d..(i + 1) * d] == x)
            .ok_or_else(|| {
                FluctuationError::BadInput(format!("no individual at {x:?} during replay"))
            })?;
        let s = self.stride;
        let c = self.cache[idx * s..(idx + 1) * s].to_vec();
        let (phi_v, dphi, dphi2, b, dd) = (c[0], c[1], c[2], c[3], c[4]);
        self.s_phi -= phi_v;
        self.s_b_dphi -= b * dphi;
        self.s_b_dphi2 -= b * dphi2;
        self.s_d_phi -= dd * phi_v;
        self.s_d_phi2 -= dd * phi_v * phi_v;
        for k in 0..self.n_terms {
            self.s_phi_f[k] -= phi_v * c[5 + k];
            self.s_phi2_f[k] -= phi_v * phi_v * c[5 + k];
            self.s_g[k] -= c[5 + self.n_terms + k];
        }
        let last = self.len() - 1;
        for a in 0..d {
            self.points.swap(idx * d + a, last * d + a);
        }
        self.points.truncate(last * d);
        for a in (0..s).rev() {
            self.cache.swap_remove(idx * s + a);
        }
        Ok(phi_v)
    }

    /// Drift integrand of the scaled process:
    /// `<X, b (D phi)> - <X, phi d> - <X phi, alpha X>`.
    fn drift(&self, n: f64) -> f64 {
        let mut comp = 0.0;
        for k in 0..self.n_terms {
            comp += self.s_phi_f[k] * self.s_g[k];
        }
        (self.s_b_dphi - self.s_d_phi) / n - comp / (n * n)
    }

    /// Compensator integrand:
    /// `<X, b (D phi^2)> + <X, phi^2 d> + <X phi^2, alpha X>`.
    fn compensator_rate(&self, n: f64) -> f64 {
        let mut comp = 0.0;
        for k in 0..self.n_terms {
            comp += self.s_phi2_f[k] * self.s_g[k];
        }
        (self.s_b_dphi2 + self.s_d_phi2) / n + comp / (n * n)
    }

    /// Pure mean-field-free pieces needed by the reconstruction identity.
    fn raw_integrands(&self, n: f64) -> (f64, f64, f64) {
        let mut comp = 0.0;
        for k in 0..self.n_terms {
            comp += self.s_phi_f[k] * self.s_g[k];
        }
        (self.s_b_dphi / n, self.s_d_phi / n, comp / (n * n))
    }
}

/// `Int phi(x + z) D(x, dz)` (or of `phi^2`) at one source point.
fn dispersal_average_at(
    spec: &ModelSpec,
    phi: &Observable,
    x: &[f64],
    squared: bool,
) -> Result<f64, FluctuationError> {
    if spec.dispersal().is_point_mass() {
        let v = phi.eval(spec.space(), x);
        return Ok(if squared { v * v } else { v });
    }
    if spec.dim() != 1 {
        return Err(FluctuationError::Unsupported(
            "martingale replay with non-degenerate dispersal needs dim 1".into(),
        ));
    }
    let (l, u) = spec.space().side(0);
    let val = adaptive_simpson(
        |y| {
            let m = spec
                .dispersal()
                .density(spec.space(), x, &[y - x[0]])
                .unwrap_or(Some(0.0))
                .unwrap_or(0.0);
            let p = phi.eval(spec.space(), &[y]);
            m * if squared { p * p } else { p }
        },
        l,
        u,
        1e-11,
    );
    Ok(val)
}

/// Walk the event log and sample the decomposition at `times`.
pub fn martingale_path(
    log: &EventLog,
    spec: &ModelSpec,
    phi: &Observable,
    times: &[f64],
) -> Result<MartingalePath, FluctuationError> {
    for w in times.windows(2) {
        if w[1] <= w[0] {
            return Err(FluctuationError::BadInput(
                "evaluation times must be strictly increasing".into(),
            ));
        }
    }
    let n = log.scale as f64;
    let sqrt_n = n.sqrt();
    let mut replay = Replay::new(spec, phi, &log.initial)?;
    let phi0 = replay.s_phi / n;

    let mut out = MartingalePath {
        times: times.to_vec(),
        martingale: Vec::with_capacity(times.len()),
        compensator: Vec::with_capacity(times.len()),
        bracket: Vec::with_capacity(times.len()),
    };

    let mut t_prev = 0.0f64;
    let mut drift_acc = 0.0f64;
    let mut comp_acc = 0.0f64;
    let mut bracket = 0.0f64;
    let mut time_iter = times.iter().peekable();

    // Evaluation times strictly before the next jump read the pre-jump
    // state; a time equal to a jump reads the post-jump state.
    let flush = |up_to_exclusive: f64,
                     t_prev: &mut f64,
                     drift_acc: &mut f64,
                     comp_acc: &mut f64,
                     bracket: f64,
                     replay: &Replay,
                     out: &mut MartingalePath,
                     time_iter: &mut std::iter::Peekable<std::slice::Iter<f64>>| {
        while let Some(&&tau) = time_iter.peek() {
            if tau >= up_to_exclusive {
                break;
            }
            let d = replay.drift(n);
            let c = replay.compensator_rate(n);
            let da = *drift_acc + (tau - *t_prev) * d;
            let ca = *comp_acc + (tau - *t_prev) * c;
            out.martingale
                .push(sqrt_n * (replay.s_phi / n - phi0 - da));
            out.compensator.push(ca);
            out.bracket.push(bracket);
            *drift_acc = da;
            *comp_acc = ca;
            *t_prev = tau;
            time_iter.next();
        }
    };

    for ev in &log.events {
        flush(
            ev.time,
            &mut t_prev,
            &mut drift_acc,
            &mut comp_acc,
            bracket,
            &replay,
            &mut out,
            &mut time_iter,
        );
        drift_acc += (ev.time - t_prev) * replay.drift(n);
        comp_acc += (ev.time - t_prev) * replay.compensator_rate(n);
        t_prev = ev.time;
        let x_event = match ev.kind {
            EventKind::Birth => {
                let child = ev.child.as_ref().ok_or_else(|| {
                    FluctuationError::BadInput("birth event without child".into())
                })?;
                replay.insert(child, phi)?;
                child.clone()
            }
            EventKind::NaturalDeath | EventKind::CompetitionDeath => {
                replay.remove_by_trait(&ev.subject)?;
                ev.subject.clone()
            }
        };
        let pv = phi.eval(spec.space(), &x_event);
        bracket += pv * pv / n;
    }
    // Tail after the last event.
    flush(
        f64::INFINITY,
        &mut t_prev,
        &mut drift_acc,
        &mut comp_acc,
        bracket,
        &replay,
        &mut out,
        &mut time_iter,
    );
    Ok(out)
}

/// Residual of the semimartingale identity at the evaluation times.
///
/// The fluctuation field must satisfy
/// `<Y_t, phi> = <Y_0, phi> + drift(t) + M_t(phi)` where the drift couples
/// the configuration to the deterministic limit. Configuration integrals
/// are exact event sums; limit integrals are composite-Simpson sums over
/// `mf`, which must sample each interval between evaluation times with an
/// even number of uniform steps. The residual is the quadrature plus
/// limit-solver error, scaled by `sqrt(n)`.
pub fn reconstruction_residual(
    log: &EventLog,
    spec: &ModelSpec,
    disc: &Discretization,
    mf: &MeanfieldPath,
    phi: &Observable,
    times: &[f64],
) -> Result<Vec<f64>, FluctuationError> {
    let n = log.scale as f64;
    let sqrt_n = n.sqrt();
    let exact = martingale_path(log, spec, phi, times)?;

    // Exact configuration integrals at the evaluation times.
    let mut replay = Replay::new(spec, phi, &log.initial)?;
    let phi0_sim = replay.s_phi / n;
    let mut raw_b = Vec::with_capacity(times.len());
    let mut raw_d = Vec::with_capacity(times.len());
    let mut raw_c = Vec::with_capacity(times.len());
    let mut phi_t = Vec::with_capacity(times.len());
    {
        let mut acc = (0.0f64, 0.0f64, 0.0f64);
        let mut t_prev = 0.0f64;
        let mut iter = times.iter().peekable();
        let flush = |up_to_exclusive: f64,
                         t_prev: &mut f64,
                         acc: &mut (f64, f64, f64),
                         replay: &Replay,
                         raw_b: &mut Vec<f64>,
                         raw_d: &mut Vec<f64>,
                         raw_c: &mut Vec<f64>,
                         phi_t: &mut Vec<f64>,
                         iter: &mut std::iter::Peekable<std::slice::Iter<f64>>| {
            while let Some(&&tau) = iter.peek() {
                if tau >= up_to_exclusive {
                    break;
                }
                let (gb, gd, gc) = replay.raw_integrands(n);
                acc.0 += (tau - *t_prev) * gb;
                acc.1 += (tau - *t_prev) * gd;
                acc.2 += (tau - *t_prev) * gc;
                raw_b.push(acc.0);
                raw_d.push(acc.1);
                raw_c.push(acc.2);
                phi_t.push(replay.s_phi / n);
                *t_prev = tau;
                iter.next();
            }
        };
        for ev in &log.events {
            flush(
                ev.time,
                &mut t_prev,
                &mut acc,
                &replay,
                &mut raw_b,
                &mut raw_d,
                &mut raw_c,
                &mut phi_t,
                &mut iter,
            );
            let (gb, gd, gc) = replay.raw_integrands(n);
            acc.0 += (ev.time - t_prev) * gb;
            acc.1 += (ev.time - t_prev) * gd;
            acc.2 += (ev.time - t_prev) * gc;
            t_prev = ev.time;
            match ev.kind {
                EventKind::Birth => {
                    replay.insert(ev.child.as_ref().unwrap(), phi)?;
                }
                _ => {
                    replay.remove_by_trait(&ev.subject)?;
                }
            }
        }
        flush(
            f64::INFINITY,
            &mut t_prev,
            &mut acc,
            &replay,
            &mut raw_b,
            &mut raw_d,
            &mut raw_c,
            &mut phi_t,
            &mut iter,
        );
    }

    // Limit integrals over the refined lattice.
    let grid = disc.grid();
    let phi_grid = disc.observable_values(phi);
    let dphi_grid = disc.dispersal_average(&phi_grid);
    let b = disc.birth_values();
    let d = disc.death_values();
    let (f, g) = disc.kernel_factors();
    let w = grid.weights();
    let nn = grid.len();
    let integrand_at = |u: &[f64]| -> (f64, f64, f64) {
        let mut ib = 0.0;
        let mut idd = 0.0;
        for p in 0..nn {
            ib += w[p] * u[p] * b[p] * dphi_grid[p];
            idd += w[p] * u[p] * d[p] * phi_grid[p];
        }
        let mut ic = 0.0;
        for k in 0..f.len() {
            let left: f64 = (0..nn).map(|p| w[p] * u[p] * phi_grid[p] * f[k][p]).sum();
            let right: f64 = (0..nn).map(|p| w[p] * u[p] * g[k][p]).sum();
            ic += left * right;
        }
        (ib, idd, ic)
    };
    let samples: Vec<(f64, f64, f64)> = mf.states.iter().map(|u| integrand_at(u)).collect();
    let phi_mf_at = |idx: usize| grid.integrate_against(&mf.states[idx], &phi_grid);

    // Cumulative Simpson at the evaluation times.
    let mut q_b = vec![0.0; times.len()];
    let mut q_d = vec![0.0; times.len()];
    let mut q_c = vec![0.0; times.len()];
    let mut phi_mf = vec![0.0; times.len()];
    let mut start_idx = mf
        .index_of(0.0)
        .ok_or_else(|| FluctuationError::BadInput("refined path must start at 0".into()))?;
    let mut acc = (0.0, 0.0, 0.0);
    for (m, &tau) in times.iter().enumerate() {
        let end_idx = mf.index_of(tau).ok_or_else(|| {
            FluctuationError::BadInput(format!("evaluation time {tau} missing from refined path"))
        })?;
        if end_idx > start_idx {
            let count = end_idx - start_idx + 1;
            if count % 2 == 0 {
                return Err(FluctuationError::BadInput(
                    "refined path must cover each segment with an even interval count".into(),
                ));
            }
            let h = (mf.times[end_idx] - mf.times[start_idx]) / (count - 1) as f64;
            let seg: Vec<f64> = (start_idx..=end_idx).map(|i| samples[i].0).collect();
            acc.0 += simpson_uniform(&seg, h);
            let seg: Vec<f64> = (start_idx..=end_idx).map(|i| samples[i].1).collect();
            acc.1 += simpson_uniform(&seg, h);
            let seg: Vec<f64> = (start_idx..=end_idx).map(|i| samples[i].2).collect();
            acc.2 += simpson_uniform(&seg, h);
        }
        q_b[m] = acc.0;
        q_d[m] = acc.1;
        q_c[m] = acc.2;
        phi_mf[m] = phi_mf_at(end_idx);
        start_idx = end_idx;
    }

    let phi0_mf = phi_mf_at(mf.index_of(0.0).unwrap());
    let mut residuals = Vec::with_capacity(times.len());
    for m in 0..times.len() {
        let y_t = sqrt_n * (phi_t[m] - phi_mf[m]);
        let y_0 = sqrt_n * (phi0_sim - phi0_mf);
        let drift = sqrt_n
            * ((raw_b[m] - q_b[m]) - (raw_d[m] - q_d[m]) - raw_c[m] + q_c[m]);
        residuals.push((y_t - y_0 - drift - exact.martingale[m]).abs());
    }
    Ok(residuals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, Observable};
    use crate::sim::{init_population, simulate_population, InitialCondition, SimOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn run_degenerate(n: u64, horizon: f64, seed: u64) -> (ModelSpec, EventLog) {
        let spec = ModelSpec::degenerate(2.0, 1.0, 1.0, n).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let pop = init_population(
            &spec,
            &InitialCondition::point_mass(1.0, vec![0.5]),
            &mut rng,
        )
        .unwrap();
        let (_path, log) = simulate_population(
            &spec,
            pop,
            horizon,
            &[Observable::one(1)],
            &[0.0, horizon],
            &mut rng,
            &SimOptions::default(),
        )
        .unwrap();
        (spec, log)
    }

    #[test]
    fn zero_observable_gives_zero_everything() {
        let (spec, log) = run_degenerate(100, 2.0, 1);
        let zero = Observable::Field {
            field: crate::model::ScalarField::constant(0.0),
        };
        let mp = martingale_path(&log, &spec, &zero, &[0.5, 1.0, 2.0]).unwrap();
        assert!(mp.martingale.iter().all(|&v| v == 0.0));
        assert!(mp.compensator.iter().all(|&v| v == 0.0));
        assert!(mp.bracket.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_observable_bracket_counts_events() {
        let (spec, log) = run_degenerate(100, 2.0, 2);
        let one = Observable::one(1);
        let mp = martingale_path(&log, &spec, &one, &[2.0]).unwrap();
        let expected = log.events.len() as f64 / 100.0;
        assert!((mp.bracket[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn martingale_has_zero_mean_and_bracket_matches_compensator() {
        // Monte-Carlo oracle for the martingale property.
        let n = 300;
        let horizon = 3.0;
        let reps = 400;
        let phi = Observable::monomial_1d(1);
        let spec = ModelSpec::degenerate(2.0, 1.0, 1.0, n).unwrap();
        let mut m_t = Vec::with_capacity(reps);
        let mut gap = Vec::with_capacity(reps);
        for r in 0..reps {
            let mut rng = ChaCha12Rng::seed_from_u64(40_000 + r as u64);
            let pop = init_population(
                &spec,
                &InitialCondition::uniform(1.0, crate::sim::InitMode::Quantized),
                &mut rng,
            )
            .unwrap();
            let (_p, log) = simulate_population(
                &spec,
                pop,
                horizon,
                &[Observable::one(1)],
                &[0.0, horizon],
                &mut rng,
                &SimOptions::default(),
            )
            .unwrap();
            let mp = martingale_path(&log, &spec, &phi, &[horizon]).unwrap();
            m_t.push(mp.martingale[0]);
            gap.push(mp.bracket[0] - mp.compensator[0]);
        }
        let mean_m = crate::stats::mean(&m_t);
        let se_m = crate::stats::standard_error(&m_t);
        assert!(
            mean_m.abs() <= 3.0 * se_m,
            "E[M_T] = {mean_m} exceeds 3 SE {}",
            3.0 * se_m
        );
        let mean_gap = crate::stats::mean(&gap);
        let se_gap = crate::stats::standard_error(&gap);
        assert!(
            mean_gap.abs() <= 3.0 * se_gap.max(1e-12),
            "E[[M] - <M>] = {mean_gap} exceeds 3 SE {}",
            3.0 * se_gap
        );
    }

    #[test]
    fn reconstruction_identity_holds_degenerate() {
        let n = 400;
        let horizon = 2.0;
        let (spec, log) = run_degenerate(n, horizon, 7);
        let disc = crate::meanfield::Discretization::new(&spec, 9).unwrap();
        let u0 = disc
            .initial_density(&InitialCondition::point_mass(1.0, vec![0.5]))
            .unwrap();
        // 4 evaluation segments, each refined by 10 Simpson intervals.
        let eval: Vec<f64> = (1..=4).map(|i| i as f64 * 0.5).collect();
        let mut refined = vec![0.0];
        let mut prev = 0.0;
        for &t in &eval {
            for j in 1..=10 {
                refined.push(prev + (t - prev) * j as f64 / 10.0);
            }
            prev = t;
        }
        let mf = disc.integrate(&u0, 1e-3, &refined).unwrap();
        for phi in [Observable::one(1), Observable::monomial_1d(1)] {
            let res = reconstruction_residual(&log, &spec, &disc, &mf, &phi, &eval).unwrap();
            for (tau, r) in eval.iter().zip(&res) {
                assert!(r <= &1e-6, "residual {r} at t = {tau} for {}", phi.label());
            }
        }
    }

    #[test]
    fn reconstruction_identity_holds_with_dispersal() {
        let spec = ModelSpec::new(
            crate::model::TraitSpace::unit_interval(),
            crate::model::ScalarField::GaussianBump {
                center: vec![0.5],
                width: 0.2,
                height: 0.7,
                floor: 0.8,
            },
            crate::model::ScalarField::constant(0.5),
            crate::model::SeparableKernel::constant(1.0),
            crate::model::DispersalKernel::TruncatedGaussian { sigma: 0.1 },
            300,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let pop = init_population(
            &spec,
            &InitialCondition::uniform(0.6, crate::sim::InitMode::Quantized),
            &mut rng,
        )
        .unwrap();
        let horizon = 1.0;
        let (_p, log) = simulate_population(
            &spec,
            pop,
            horizon,
            &[Observable::one(1)],
            &[0.0, horizon],
            &mut rng,
            &SimOptions::default(),
        )
        .unwrap();
        let disc = crate::meanfield::Discretization::new(&spec, 64).unwrap();
        let u0 = disc
            .initial_density(&InitialCondition::uniform(0.6, crate::sim::InitMode::Quantized))
            .unwrap();
        let eval = [0.5, 1.0];
        let mut refined = vec![0.0];
        let mut prev = 0.0;
        for &t in &eval {
            for j in 1..=20 {
                refined.push(prev + (t - prev) * j as f64 / 20.0);
            }
            prev = t;
        }
        let mf = disc.integrate(&u0, 1e-3, &refined).unwrap();
        let phi = Observable::monomial_1d(1);
        let res = reconstruction_residual(&log, &spec, &disc, &mf, &phi, &eval).unwrap();
        // Quadrature error only; the grid transport is shared by both sides.
        for r in &res {
            assert!(*r <= 1e-6, "residual {r}");
        }
    }
}
