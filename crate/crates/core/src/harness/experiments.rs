//! The six experiment drivers. Each composes the model, simulator, limit
//! solvers and statistics into a pass/fail report plus flat-file artifacts.
//!
//! Replicas run on a worker pool; every replica owns its population and a
//! random stream derived from (master seed, replica index, label), and the
//! aggregation consumes replica summaries in index order, so results do not
//! depend on scheduling or thread count.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{
    self, coupled_yule_run, exp_form_threshold, pure_birth_mass_sim, tail_bound_exp,
    tail_bound_general, InitialMassLaw, TailBoundQuery,
};
use crate::fluctuation::{
    empirical_covariance, fluctuation_values, gaussianity_diagnostics, initial_covariance_iid,
    lyapunov_for_model, martingale_path, TestFunctionSet,
};
use crate::meanfield::{logistic_closed_form, weak_form_reference, Discretization};
use crate::model::Observable;
use crate::ou1d::{self, OuParams};
use crate::sim::{
    init_population, simulate_population, InitMode, MeasurePath, SimOptions, SpatialLaw,
};
use crate::stats;
use crate::tolerances as tol;

use super::config::{ExperimentConfig, ExperimentKind};
use super::report::{Artifact, CovarianceCsv, CriterionResult, RunReport};
use super::seed::stream_rng;
use super::HarnessError;

pub(super) fn resolve_threads(cfg: &ExperimentConfig) -> Option<usize> {
    cfg.threads.or_else(|| {
        std::env::var("BPDL_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    })
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool, HarnessError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    builder
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))
}

/// Replica map: failures are collected, not fatal; successes keep index
/// order.
fn par_map<T: Send>(
    pool: &rayon::ThreadPool,
    count: usize,
    f: impl Fn(u64) -> Result<T, String> + Sync,
) -> (Vec<T>, Vec<(u64, String)>) {
    let results: Vec<(u64, Result<T, String>)> = pool.install(|| {
        (0..count as u64)
            .into_par_iter()
            .map(|r| (r, f(r)))
            .collect()
    });
    let mut ok = Vec::with_capacity(count);
    let mut failures = Vec::new();
    for (r, res) in results {
        match res {
            Ok(v) => ok.push(v),
            Err(e) => failures.push((r, e)),
        }
    }
    (ok, failures)
}

fn failure_criterion(report: &mut RunReport, failures: &[(u64, String)], total: usize) {
    let detail = if failures.is_empty() {
        format!("all {total} replicas completed")
    } else {
        let head: Vec<String> = failures
            .iter()
            .take(3)
            .map(|(r, e)| format!("replica {r}: {e}"))
            .collect();
        head.join("; ")
    };
    report.push(CriterionResult::new(
        "replica_failures",
        failures.len() as f64,
        0.0,
        failures.is_empty(),
        detail,
    ));
}

/// Snapshot times prefixed with zero for the limit solver.
fn with_origin(times: &[f64]) -> Vec<f64> {
    if times.first().is_some_and(|&t| t == 0.0) {
        times.to_vec()
    } else {
        let mut out = Vec::with_capacity(times.len() + 1);
        out.push(0.0);
        out.extend_from_slice(times);
        out
    }
}

/// Rows of `path` restricted to the requested times.
fn select_rows(path: &MeasurePath, times: &[f64]) -> Result<MeasurePath, HarnessError> {
    let mut mass = Vec::with_capacity(times.len());
    let mut values = Vec::with_capacity(times.len() * path.labels.len());
    for &t in times {
        let idx = path
            .times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9)
            .ok_or_else(|| HarnessError::Config(format!("time {t} missing from limit path")))?;
        mass.push(path.mass[idx]);
        values.extend_from_slice(path.row(idx));
    }
    Ok(MeasurePath {
        times: times.to_vec(),
        mass,
        labels: path.labels.clone(),
        values,
    })
}

// ---------------------------------------------------------------------------
// Law of large numbers: mass error against the limit over a scale ladder.
// ---------------------------------------------------------------------------

pub fn lln_convergence(cfg: &ExperimentConfig) -> Result<(RunReport, Vec<Artifact>), HarnessError> {
    let mut report = RunReport::new(ExperimentKind::LlnConvergence, cfg.seed);
    let pool = pool(resolve_threads(cfg))?;
    let snaps = cfg.snapshot_times();
    let mf_times = with_origin(&snaps);

    let spec0 = cfg.model.build(cfg.scales[0])?;
    let disc = Discretization::new(&spec0, cfg.meanfield.nodes_per_dim)?;
    let u0 = disc.initial_density(&cfg.init)?;
    let mf = disc.integrate(&u0, cfg.meanfield.dt, &mf_times)?;
    let mass_obs = [Observable::one(spec0.dim())];
    let mf_proj = mf.project(&disc, &mass_obs);
    let reference = select_rows(&mf_proj, &snaps)?;

    let mut per_scale: Vec<(u64, f64, f64, usize)> = Vec::new();
    let mut all_failures = 0usize;
    let mut first_replica_path: Option<MeasurePath> = None;
    for &n in &cfg.scales {
        let spec = cfg.model.build(n)?;
        let (errs_and_paths, failures) = par_map(&pool, cfg.replicas, |r| {
            let mut init_rng = stream_rng(cfg.seed, r, &format!("init/n{n}"));
            let mut ev_rng = stream_rng(cfg.seed, r, &format!("events/n{n}"));
            let pop = init_population(&spec, &cfg.init, &mut init_rng).map_err(|e| e.to_string())?;
            let (path, _log) = simulate_population(
                &spec,
                pop,
                cfg.horizon,
                &mass_obs,
                &snaps,
                &mut ev_rng,
                &SimOptions::default(),
            )
            .map_err(|e| e.to_string())?;
            let sup = path
                .mass
                .iter()
                .zip(&reference.mass)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            Ok((sup, if r == 0 { Some(path) } else { None }))
        });
        all_failures += failures.len();
        let errs: Vec<f64> = errs_and_paths.iter().map(|(e, _)| *e).collect();
        if let Some((_, Some(path))) = errs_and_paths.into_iter().next() {
            first_replica_path.get_or_insert(path);
        }
        if errs.len() < 2 {
            return Err(HarnessError::Config(format!(
                "scale {n}: too many replica failures"
            )));
        }
        per_scale.push((n, stats::mean(&errs), stats::standard_error(&errs), errs.len()));
        failure_criterion(&mut report, &failures, cfg.replicas);
    }

    let log_n: Vec<f64> = per_scale.iter().map(|(n, ..)| (*n as f64).ln()).collect();
    let log_e: Vec<f64> = per_scale.iter().map(|(_, e, ..)| e.ln()).collect();
    let slope = stats::linear_slope(&log_n, &log_e);
    report.push(CriterionResult::in_window(
        "lln_slope",
        slope,
        cfg.tol("lln_slope_lo", tol::LLN_SLOPE_LO),
        cfg.tol("lln_slope_hi", tol::LLN_SLOPE_HI),
        format!(
            "log-log slope of replica-mean sup-mass error over scales {:?}; {all_failures} failures",
            cfg.scales
        ),
    ));

    let mut table = vec!["scale,mean_sup_error,se,replicas".to_string()];
    for (n, e, se, r) in &per_scale {
        table.push(format!("{n},{e},{se},{r}"));
    }
    let mut artifacts = vec![Artifact::from_string(
        "lln_errors.csv",
        table.join("\n") + "\n",
    )];
    let mut mf_csv = Vec::new();
    reference.write_csv(&mut mf_csv)?;
    artifacts.push(Artifact {
        name: "meanfield_snapshots.csv".into(),
        bytes: mf_csv,
    });
    if let Some(path) = first_replica_path {
        let mut sim_csv = Vec::new();
        path.write_csv(&mut sim_csv)?;
        artifacts.push(Artifact {
            name: "sim_snapshots_r0.csv".into(),
            bytes: sim_csv,
        });
    }
    Ok((report, artifacts))
}

// ---------------------------------------------------------------------------
// Martingale identity: zero mean and compensator correctness at the horizon.
// ---------------------------------------------------------------------------

pub fn martingale_check(cfg: &ExperimentConfig) -> Result<(RunReport, Vec<Artifact>), HarnessError> {
    let mut report = RunReport::new(ExperimentKind::MartingaleCheck, cfg.seed);
    let pool = pool(resolve_threads(cfg))?;
    let n = cfg.scales[0];
    let spec = cfg.model.build(n)?;
    let phis = cfg.martingale.observables.clone();
    let horizon = cfg.horizon;
    let sigma = cfg.tol("sigma_rule", tol::SIGMA_RULE);

    let mass_obs = [Observable::one(spec.dim())];
    let (rows, failures) = par_map(&pool, cfg.replicas, |r| {
        let mut init_rng = stream_rng(cfg.seed, r, "init");
        let mut ev_rng = stream_rng(cfg.seed, r, "events");
        let pop = init_population(&spec, &cfg.init, &mut init_rng).map_err(|e| e.to_string())?;
        let (_path, log) = simulate_population(
            &spec,
            pop,
            horizon,
            &mass_obs,
            &[0.0, horizon],
            &mut ev_rng,
            &SimOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        let mut row = Vec::with_capacity(phis.len());
        for phi in &phis {
            let mp = martingale_path(&log, &spec, phi, &[horizon]).map_err(|e| e.to_string())?;
            row.push((mp.martingale[0], mp.bracket[0] - mp.compensator[0]));
        }
        Ok(row)
    });
    failure_criterion(&mut report, &failures, cfg.replicas);

    let mut table = vec!["phi,mean_martingale,se_martingale,mean_gap,se_gap".to_string()];
    for (j, phi) in phis.iter().enumerate() {
        let m: Vec<f64> = rows.iter().map(|row| row[j].0).collect();
        let gap: Vec<f64> = rows.iter().map(|row| row[j].1).collect();
        let (mean_m, se_m) = (stats::mean(&m), stats::standard_error(&m));
        let (mean_g, se_g) = (stats::mean(&gap), stats::standard_error(&gap));
        report.push(CriterionResult::abs_le(
            format!("martingale_mean[{}]", phi.label()),
            mean_m,
            sigma * se_m,
            format!("mean terminal martingale over {} replicas", m.len()),
        ));
        report.push(CriterionResult::abs_le(
            format!("bracket_minus_compensator[{}]", phi.label()),
            mean_g,
            sigma * se_g.max(f64::MIN_POSITIVE),
            "mean of empirical bracket minus predictable compensator",
        ));
        table.push(format!(
            "{},{mean_m},{se_m},{mean_g},{se_g}",
            phi.label()
        ));
    }
    let artifacts = vec![Artifact::from_string(
        "martingale_summary.csv",
        table.join("\n") + "\n",
    )];
    Ok((report, artifacts))
}

// ---------------------------------------------------------------------------
// Central limit theorem: empirical fluctuation covariance against the
// Lyapunov flow, plus Gaussianity of the marginals.
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct GaussCell {
    t: f64,
    phi: String,
    skewness: f64,
    excess_kurtosis: f64,
    ks_pvalue: f64,
}

pub fn clt_covariance(cfg: &ExperimentConfig) -> Result<(RunReport, Vec<Artifact>), HarnessError> {
    let mut report = RunReport::new(ExperimentKind::CltCovariance, cfg.seed);
    let pool = pool(resolve_threads(cfg))?;
    let eval = cfg.clt.eval_times.clone();
    if eval.is_empty() || eval.windows(2).any(|w| w[1] <= w[0]) || eval[0] <= 0.0 {
        return Err(HarnessError::Config(
            "clt.eval_times must be strictly increasing and positive".into(),
        ));
    }
    let horizon = *eval.last().unwrap();
    let sigma = cfg.tol("sigma_rule", tol::SIGMA_RULE);

    let spec0 = cfg.model.build(cfg.scales[0])?;
    let testset = TestFunctionSet::new(cfg.observables.build(spec0.space())?)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let disc = Discretization::new(&spec0, cfg.meanfield.nodes_per_dim)?;
    let u0 = disc.initial_density(&cfg.init)?;

    let mf_times = with_origin(&eval);
    let mf = disc.integrate(&u0, cfg.meanfield.dt, &mf_times)?;
    let mf_proj = select_rows(&mf.project(&disc, testset.functions()), &eval)?;

    let k0 = match cfg.init.mode {
        InitMode::Quantized => DMatrix::zeros(disc.grid().len(), disc.grid().len()),
        InitMode::Iid => initial_covariance_iid(disc.grid(), &u0),
    };
    let cov_path = lyapunov_for_model(&disc, &u0, k0, horizon, cfg.meanfield.dt, &eval)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let vectors = testset.grid_vectors(&disc);
    let theory = cov_path.project(&vectors);
    let gram_cond = testset.gram_condition(&disc);

    let k = testset.len();
    let mut csv = CovarianceCsv::new();
    let mut frobenius: Vec<(u64, f64)> = Vec::new();
    let mut max_sigma_ratio_at_top = 0.0f64;
    let mut worst_cell = String::new();
    let mut gauss_cells: Vec<GaussCell> = Vec::new();
    let n_top = *cfg.scales.last().unwrap();

    for &n in &cfg.scales {
        let spec = cfg.model.build(n)?;
        // Equal replica counts keep the estimator noise floor common to
        // every scale, which is what the discrepancy comparison sees once
        // the finite-scale covariance bias drops below it.
        let replicas = cfg.replicas;
        let (rows, failures) = par_map(&pool, replicas, |r| {
            let mut init_rng = stream_rng(cfg.seed, r, &format!("init/n{n}"));
            let mut ev_rng = stream_rng(cfg.seed, r, &format!("events/n{n}"));
            let pop =
                init_population(&spec, &cfg.init, &mut init_rng).map_err(|e| e.to_string())?;
            let (path, _log) = simulate_population(
                &spec,
                pop,
                horizon,
                testset.functions(),
                &eval,
                &mut ev_rng,
                &SimOptions::default(),
            )
            .map_err(|e| e.to_string())?;
            fluctuation_values(&path, &mf_proj, n).map_err(|e| e.to_string())
        });
        failure_criterion(&mut report, &failures, replicas);
        if rows.len() < 3 {
            return Err(HarnessError::Config(format!(
                "scale {n}: too many replica failures"
            )));
        }

        let mut frob2 = 0.0;
        for (ti, &t) in eval.iter().enumerate() {
            let data: Vec<Vec<f64>> = rows.iter().map(|rep| rep[ti].clone()).collect();
            let (emp, se) =
                empirical_covariance(&data).map_err(|e| HarnessError::Config(e.to_string()))?;
            for i in 0..k {
                for j in 0..k {
                    let th = theory[ti][(i, j)];
                    csv.push(n, t, i, j, emp[(i, j)], th, se[(i, j)]);
                    let diff = emp[(i, j)] - th;
                    frob2 += diff * diff;
                    if n == n_top {
                        let ratio = diff.abs() / se[(i, j)].max(f64::MIN_POSITIVE);
                        if ratio > max_sigma_ratio_at_top {
                            max_sigma_ratio_at_top = ratio;
                            worst_cell = format!(
                                "t={t} ({}, {}): emp {} vs theory {th} (se {})",
                                testset.labels()[i],
                                testset.labels()[j],
                                emp[(i, j)],
                                se[(i, j)]
                            );
                        }
                    }
                }
            }
            if n == n_top {
                let mut mc_rng = stream_rng(cfg.seed, ti as u64, "gaussianity_mc");
                for j in 0..k {
                    let samples: Vec<f64> = data.iter().map(|row| row[j]).collect();
                    let g = gaussianity_diagnostics(&samples, &mut mc_rng, 400)
                        .map_err(|e| HarnessError::Config(e.to_string()))?;
                    gauss_cells.push(GaussCell {
                        t,
                        phi: testset.labels()[j].clone(),
                        skewness: g.skewness,
                        excess_kurtosis: g.excess_kurtosis,
                        ks_pvalue: g.ks_pvalue,
                    });
                }
            }
        }
        frobenius.push((n, frob2.max(0.0).sqrt()));
    }

    report.push(CriterionResult::new(
        "clt_entrywise_sigma_max",
        max_sigma_ratio_at_top,
        sigma,
        max_sigma_ratio_at_top <= sigma,
        format!("worst covariance entry at n = {n_top}: {worst_cell}; Gram condition {gram_cond:.2e}"),
    ));
    let first = frobenius.first().unwrap();
    let last = frobenius.last().unwrap();
    report.push(CriterionResult::new(
        "clt_discrepancy_ratio",
        last.1 / first.1,
        1.0,
        last.1 < first.1,
        format!(
            "Frobenius discrepancy {} at n = {} against {} at n = {}",
            last.1, last.0, first.1, first.0
        ),
    ));
    let worst_skew = gauss_cells
        .iter()
        .map(|c| c.skewness.abs())
        .fold(0.0f64, f64::max);
    let worst_kurt = gauss_cells
        .iter()
        .map(|c| c.excess_kurtosis.abs())
        .fold(0.0f64, f64::max);
    report.push(CriterionResult::abs_le(
        "gauss_skewness_max",
        worst_skew,
        cfg.tol("skewness_max", tol::SKEWNESS_MAX),
        format!("largest |skewness| over {} cells at n = {n_top}", gauss_cells.len()),
    ));
    report.push(CriterionResult::abs_le(
        "gauss_excess_kurtosis_max",
        worst_kurt,
        cfg.tol("excess_kurtosis_max", tol::EXCESS_KURTOSIS_MAX),
        format!("largest |excess kurtosis| over {} cells at n = {n_top}", gauss_cells.len()),
    ));

    let artifacts = vec![
        csv.into_artifact("covariance.csv"),
        Artifact::from_string(
            "gaussianity.json",
            serde_json::to_string_pretty(&gauss_cells).expect("cells serialize"),
        ),
    ];
    Ok((report, artifacts))
}

// ---------------------------------------------------------------------------
// Stationary fluctuation law of the degenerate system.
// ---------------------------------------------------------------------------

pub fn ou_stationary(cfg: &ExperimentConfig) -> Result<(RunReport, Vec<Artifact>), HarnessError> {
    let mut report = RunReport::new(ExperimentKind::OuStationary, cfg.seed);
    let pool = pool(resolve_threads(cfg))?;
    let n = cfg.scales[0];
    let spec = cfg.model.build(n)?;
    if !spec.dispersal().is_point_mass() {
        return Err(HarnessError::Config(
            "the stationary-law experiment needs point-mass dispersal".into(),
        ));
    }
    let location = match &cfg.init.law {
        SpatialLaw::PointMass { location } => location.clone(),
        _ => {
            return Err(HarnessError::Config(
                "the stationary-law experiment needs a point-mass initial law".into(),
            ))
        }
    };
    let b = spec.eval_birth(&location)?;
    let d = spec.eval_death(&location)?;
    let a = spec.eval_alpha(&location, &location)?;
    let params = OuParams::new(b, d, a, cfg.init.mass, 0.0)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let t_star = cfg.ou.t_star;
    let target = params.stationary_variance();
    let sigma = cfg.tol("sigma_rule", tol::SIGMA_RULE);

    // (a) analytic relaxation of the variance flow.
    let v_analytic = ou1d::variance(&params, t_star);
    report.push(CriterionResult::abs_le(
        "ou_variance_analytic",
        v_analytic - target,
        cfg.tol("ou_variance", tol::OU_VARIANCE_TOL),
        format!("V({t_star}) = {v_analytic} against b/alpha = {target}"),
    ));

    // (b) empirical stationary variance of the particle fluctuation.
    let xi_star = params.xi(t_star);
    let mass_obs = [Observable::one(spec.dim())];
    let (etas, failures) = par_map(&pool, cfg.replicas, |r| {
        let mut init_rng = stream_rng(cfg.seed, r, "init");
        let mut ev_rng = stream_rng(cfg.seed, r, "events");
        let pop = init_population(&spec, &cfg.init, &mut init_rng).map_err(|e| e.to_string())?;
        let (path, _log) = simulate_population(
            &spec,
            pop,
            t_star,
            &mass_obs,
            &[t_star],
            &mut ev_rng,
            &SimOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        Ok((n as f64).sqrt() * (path.mass[0] - xi_star))
    });
    failure_criterion(&mut report, &failures, cfg.replicas);
    let sample_var = stats::variance(&etas);
    let se_var = stats::jackknife_se(&etas, stats::variance);
    report.push(CriterionResult::abs_le(
        "ou_variance_empirical",
        sample_var - target,
        sigma * se_var,
        format!(
            "sample variance {sample_var} of eta over {} replicas at n = {n} (jackknife se {se_var})",
            etas.len()
        ),
    ));

    // (c) the general grid machinery reproduces the scalar variance.
    let disc = Discretization::new(&spec, cfg.ou.lyapunov_nodes)?;
    let u0 = disc.initial_density(&cfg.init)?;
    let grid_n = disc.grid().len();
    let out_times: Vec<f64> = (0..=20).map(|i| t_star * i as f64 / 20.0).collect();
    let cov = lyapunov_for_model(
        &disc,
        &u0,
        DMatrix::zeros(grid_n, grid_n),
        t_star,
        cfg.meanfield.dt,
        &out_times,
    )
    .map_err(|e| HarnessError::Config(e.to_string()))?;
    let ones = vec![vec![1.0; grid_n]];
    let projected = cov.project(&ones);
    let mut table = vec!["t,analytic,lyapunov".to_string()];
    let mut worst = 0.0f64;
    for (idx, &t) in out_times.iter().enumerate() {
        let analytic = ou1d::variance(&params, t);
        let lyap = projected[idx][(0, 0)];
        worst = worst.max((analytic - lyap).abs());
        table.push(format!("{t},{analytic},{lyap}"));
    }
    report.push(CriterionResult::abs_le(
        "ou_lyapunov_cross_check",
        worst,
        cfg.tol("ou_cross_check", tol::OU_CROSS_CHECK_TOL),
        "largest |scalar variance - projected Lyapunov| over the time grid",
    ));

    let artifacts = vec![Artifact::from_string(
        "ou_variance.csv",
        table.join("\n") + "\n",
    )];
    Ok((report, artifacts))
}

// ---------------------------------------------------------------------------
// Large-deviation tail bounds.
// ---------------------------------------------------------------------------

pub fn tail_bound_check(cfg: &ExperimentConfig) -> Result<(RunReport, Vec<Artifact>), HarnessError> {
    let mut report = RunReport::new(ExperimentKind::TailBoundCheck, cfg.seed);
    let pool = pool(resolve_threads(cfg))?;
    let sigma = cfg.tol("sigma_rule", tol::SIGMA_RULE);
    let law = InitialMassLaw::Deterministic {
        mass: cfg.init.mass,
    };

    let mut table =
        vec!["scale,s,t,beta,threshold,exp_bound,mc_tail,mc_se,general_bound,yule_tail,yule_se"
            .to_string()];
    let mut coupling_violations = 0usize;
    let mut coupling_runs = 0usize;

    for (idx, entry) in cfg.tail.configs.iter().enumerate() {
        let spec = cfg.model.build(entry.scale)?;
        let b_bar = spec.bounds().birth_sup;
        // The bound lives on the unit per-capita clock; the maximal-rate
        // pure-birth dominator reaches physical time s at clock b_bar * s.
        let s_eff = b_bar * entry.s;
        let bound = match tail_bound_exp(s_eff, entry.t, entry.scale, entry.beta, &law) {
            Ok(b) => b,
            Err(e) => {
                report.push(CriterionResult::new(
                    format!("tail_exp_applicable[{idx}]"),
                    1.0,
                    0.0,
                    false,
                    format!("{e}"),
                ));
                continue;
            }
        };
        let threshold = exp_form_threshold(s_eff, entry.t);

        // Monte-Carlo tail of the full process at the physical horizon.
        let mass_obs = [Observable::one(spec.dim())];
        let (hits, failures) = par_map(&pool, cfg.tail.replicas, |r| {
            let mut init_rng = stream_rng(cfg.seed, r, &format!("tail_init/{idx}"));
            let mut ev_rng = stream_rng(cfg.seed, r, &format!("tail_events/{idx}"));
            let pop =
                init_population(&spec, &cfg.init, &mut init_rng).map_err(|e| e.to_string())?;
            let (path, _log) = simulate_population(
                &spec,
                pop,
                entry.s,
                &mass_obs,
                &[entry.s],
                &mut ev_rng,
                &SimOptions::default(),
            )
            .map_err(|e| e.to_string())?;
            Ok(u64::from(path.mass[0] > threshold))
        });
        failure_criterion(&mut report, &failures, cfg.tail.replicas);
        let count = hits.len().max(1);
        let p_hat = hits.iter().sum::<u64>() as f64 / count as f64;
        let se = (p_hat * (1.0 - p_hat) / count as f64).sqrt();
        report.push(CriterionResult::new(
            format!("tail_exp_bound[{idx}]"),
            p_hat,
            bound.value + sigma * se.max((1.0 / count as f64).sqrt() * 0.5),
            p_hat <= bound.value + sigma * se.max((1.0 / count as f64).sqrt() * 0.5),
            format!(
                "P(mass({}) > {threshold:.4}) at n = {} vs bound {}",
                entry.s, entry.scale, bound.value
            ),
        ));

        // The general bound must also dominate the dominating pure-birth
        // process itself.
        let general = tail_bound_general(&TailBoundQuery {
            threshold,
            time: s_eff,
            scale: entry.scale,
            beta: entry.beta,
            initial: law.clone(),
        })
        .map_err(|e| HarnessError::Config(e.to_string()))?;
        let m0 = (cfg.init.mass * entry.scale as f64).round() as u64;
        let (yule_hits, _yfail) = par_map(&pool, cfg.tail.replicas, |r| {
            let mut rng = stream_rng(cfg.seed, r, &format!("tail_yule/{idx}"));
            let count = pure_birth_mass_sim(b_bar, m0, entry.s, &mut rng, bounds::YULE_COUNT_CAP)
                .map_err(|e| e.to_string())?;
            Ok(u64::from(count as f64 / entry.scale as f64 > threshold))
        });
        let y_count = yule_hits.len().max(1);
        let y_hat = yule_hits.iter().sum::<u64>() as f64 / y_count as f64;
        let y_se = (y_hat * (1.0 - y_hat) / y_count as f64).sqrt();
        report.push(CriterionResult::new(
            format!("tail_general_vs_yule[{idx}]"),
            y_hat,
            general.value + sigma * y_se.max((1.0 / y_count as f64).sqrt() * 0.5),
            y_hat <= general.value + sigma * y_se.max((1.0 / y_count as f64).sqrt() * 0.5),
            format!("pure-birth tail vs general bound {}", general.value),
        ));

        table.push(format!(
            "{},{},{},{},{threshold},{},{p_hat},{se},{},{y_hat},{y_se}",
            entry.scale, entry.s, entry.t, entry.beta, bound.value, general.value
        ));

        // Pathwise domination of the coupling.
        let (violations, _cfail) = par_map(&pool, cfg.tail.coupling_replicas, |r| {
            let mut rng = stream_rng(cfg.seed, r, &format!("tail_coupling/{idx}"));
            let run = coupled_yule_run(&spec, &cfg.init, entry.s, &mut rng)
                .map_err(|e| e.to_string())?;
            Ok(run
                .population
                .iter()
                .zip(&run.yule)
                .filter(|(p, y)| p > y)
                .count())
        });
        coupling_violations += violations.iter().sum::<usize>();
        coupling_runs += violations.len();
    }

    report.push(CriterionResult::new(
        "tail_coupling_domination",
        coupling_violations as f64,
        0.0,
        coupling_violations == 0,
        format!("pathwise population <= dominator over {coupling_runs} coupled runs"),
    ));

    let artifacts = vec![Artifact::from_string(
        "tail_bounds.csv",
        table.join("\n") + "\n",
    )];
    Ok((report, artifacts))
}

// ---------------------------------------------------------------------------
// Grid solver validation: duality, order, closed form.
// ---------------------------------------------------------------------------

pub fn meanfield_validation(
    cfg: &ExperimentConfig,
) -> Result<(RunReport, Vec<Artifact>), HarnessError> {
    let mut report = RunReport::new(ExperimentKind::MeanfieldValidation, cfg.seed);
    let spec = cfg.model.build(cfg.scales[0])?;
    let disc = Discretization::new(&spec, cfg.meanfield.nodes_per_dim)?;
    let grid = disc.grid();

    // Weak-form residual on random polynomial test functions.
    use rand::Rng;
    let mut rng = stream_rng(cfg.seed, 0, "weak_form");
    let u: Vec<f64> = (0..grid.len())
        .map(|p| {
            let x: f64 = grid.point(p).iter().sum();
            0.4 + 0.3 * (3.0 * x).sin().powi(2)
        })
        .collect();
    let rhs = disc.rhs(&u);
    let mut worst_residual = 0.0f64;
    for _ in 0..5 {
        let coeffs: [f64; 5] = std::array::from_fn(|_| rng.random::<f64>() * 2.0 - 1.0);
        let phi: Vec<f64> = (0..grid.len())
            .map(|p| {
                let x: f64 = grid.point(p).iter().sum();
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * x.powi(k as i32))
                    .sum()
            })
            .collect();
        let lhs = grid.integrate_against(&rhs, &phi);
        let reference = weak_form_reference(&spec, grid, &u, &phi);
        let mut uphi = 0.0;
        for p in 0..grid.len() {
            uphi += grid.weights()[p] * u[p] * phi[p];
        }
        worst_residual = worst_residual.max((lhs - reference).abs() / (1.0 + uphi.abs()));
    }
    report.push(CriterionResult::abs_le(
        "mf_weak_form_residual",
        worst_residual,
        cfg.tol("weak_form_residual", tol::WEAK_FORM_RESIDUAL_TOL),
        "largest normalized duality residual over 5 random polynomials",
    ));

    // Self-convergence order.
    let u0 = disc.initial_density(&cfg.init)?;
    let horizon = cfg.horizon.min(2.0).max(0.5);
    let times = [0.0, horizon];
    let err_at = |dt: f64| -> Result<f64, HarnessError> {
        let coarse = disc.integrate(&u0, dt, &times)?;
        let fine = disc.integrate(&u0, dt / 16.0, &times)?;
        Ok(coarse.states[1]
            .iter()
            .zip(&fine.states[1])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max))
    };
    let dt0 = cfg.meanfield.convergence_dt;
    let ratio = err_at(dt0)? / err_at(dt0 / 2.0)?;
    report.push(CriterionResult::in_window(
        "mf_order_ratio",
        ratio,
        cfg.tol("rk4_order_ratio_lo", tol::RK4_ORDER_RATIO_LO),
        cfg.tol("rk4_order_ratio_hi", tol::RK4_ORDER_RATIO_HI),
        format!("terminal error ratio under halving dt = {dt0}"),
    ));

    // Degenerate mass path against the logistic closed form.
    let (deg_spec, deg_init) = if spec.dispersal().is_point_mass()
        && matches!(cfg.init.law, SpatialLaw::PointMass { .. })
    {
        (spec.clone(), cfg.init.clone())
    } else {
        (
            crate::model::ModelSpec::degenerate(2.0, 1.0, 1.0, cfg.scales[0])
                .map_err(HarnessError::Model)?,
            crate::sim::InitialCondition::point_mass(0.5, vec![0.5]),
        )
    };
    let location = match &deg_init.law {
        SpatialLaw::PointMass { location } => location.clone(),
        _ => unreachable!(),
    };
    let b = deg_spec.eval_birth(&location)?;
    let d = deg_spec.eval_death(&location)?;
    let a = deg_spec.eval_alpha(&location, &location)?;
    let deg_disc = Discretization::new(&deg_spec, 16)?;
    let deg_u0 = deg_disc.initial_density(&deg_init)?;
    let deg_times: Vec<f64> = (0..=80).map(|i| i as f64 * 0.25).collect();
    let path = deg_disc.integrate(&deg_u0, 0.005, &deg_times)?;
    let mut worst_logistic = 0.0f64;
    for (idx, &t) in path.times.iter().enumerate() {
        let exact = logistic_closed_form(deg_init.mass, b, d, a, t);
        worst_logistic = worst_logistic.max((deg_disc.grid().mass(&path.states[idx]) - exact).abs());
    }
    report.push(CriterionResult::abs_le(
        "mf_logistic_match",
        worst_logistic,
        cfg.tol("logistic_match", tol::LOGISTIC_MATCH_TOL),
        "largest |grid mass - logistic closed form| over [0, 20]",
    ));

    // Snapshot artifact of the configured model's own path.
    let snaps = with_origin(&cfg.snapshot_times());
    let mf = disc.integrate(&u0, cfg.meanfield.dt, &snaps)?;
    let obs = cfg.observables.build(spec.space())?;
    let proj = mf.project(&disc, &obs);
    let mut csv = Vec::new();
    proj.write_csv(&mut csv)?;
    let artifacts = vec![Artifact {
        name: "meanfield_snapshots.csv".into(),
        bytes: csv,
    }];
    Ok((report, artifacts))
}
