//! Python extension module exposing the main types and operations: model
//! construction from the TOML grammar, exact simulation, the grid limit
//! solver, the scalar fluctuation laws, tail bounds and stream seeding.
//!
//! Build with `cargo build -p bpdl-python --release`; the resulting
//! `libbpdl.so` imports as the `bpdl` module once renamed to `bpdl.so`
//! (see `python/smoke_test.py`).

use std::collections::HashMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyComplex;

use bpdl_core::fluctuation::{lyapunov_for_model, TestFunctionSet};
use bpdl_core::harness::{config::ModelConfig, derive_seed, stream_rng};
use bpdl_core::meanfield::{logistic_closed_form, Discretization};
use bpdl_core::model::{ModelSpec, Observable};
use bpdl_core::ou1d::{self, OuParams};
use bpdl_core::sim::{
    init_population, simulate_population, InitialCondition, SimOptions,
};
use bpdl_core::{bounds, stats};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// A validated model at scale `n`, built from the TOML model grammar.
#[pyclass]
struct Model {
    spec: ModelSpec,
}

#[pymethods]
impl Model {
    /// `Model(toml_doc, scale)` where `toml_doc` holds the `[space]`,
    /// `[birth]`, `[death]`, `[competition]`, `[dispersal]` tables.
    #[new]
    fn new(toml_doc: &str, scale: u64) -> PyResult<Self> {
        let cfg: ModelConfig = toml::from_str(toml_doc).map_err(value_err)?;
        let spec = cfg.build(scale).map_err(value_err)?;
        Ok(Self { spec })
    }

    /// The degenerate constant-rate model with no dispersal.
    #[staticmethod]
    fn degenerate(b: f64, d: f64, alpha: f64, scale: u64) -> PyResult<Self> {
        Ok(Self {
            spec: ModelSpec::degenerate(b, d, alpha, scale).map_err(value_err)?,
        })
    }

    #[getter]
    fn scale(&self) -> u64 {
        self.spec.scale()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// Certified bounds: (sup b, sup d, sup alpha, min b - d).
    fn bounds(&self) -> (f64, f64, f64, f64) {
        let b = self.spec.bounds();
        (b.birth_sup, b.death_sup, b.alpha_sup, b.growth_margin)
    }

    fn eval_birth(&self, x: Vec<f64>) -> PyResult<f64> {
        self.spec.eval_birth(&x).map_err(value_err)
    }

    fn eval_death(&self, x: Vec<f64>) -> PyResult<f64> {
        self.spec.eval_death(&x).map_err(value_err)
    }

    fn eval_alpha(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        self.spec.eval_alpha(&x, &y).map_err(value_err)
    }

    /// One dispersal draw from the trait at `x`.
    fn sample_dispersal(&self, x: Vec<f64>, seed: u64) -> PyResult<Vec<f64>> {
        let mut rng = stream_rng(seed, 0, "py_dispersal");
        self.spec.sample_dispersal(&x, &mut rng).map_err(value_err)
    }

    /// Exact event-driven run; returns a dict with times, mass, per
    /// observable columns and the event count.
    #[pyo3(signature = (mass, horizon, snapshots, seed, location = None, uniform = false, iid = false))]
    #[allow(clippy::too_many_arguments)]
    fn simulate(
        &self,
        py: Python<'_>,
        mass: f64,
        horizon: f64,
        snapshots: Vec<f64>,
        seed: u64,
        location: Option<Vec<f64>>,
        uniform: bool,
        iid: bool,
    ) -> PyResult<Py<PyAny>> {
        let mode = if iid {
            bpdl_core::sim::InitMode::Iid
        } else {
            bpdl_core::sim::InitMode::Quantized
        };
        let init = match (location, uniform) {
            (Some(loc), false) => InitialCondition {
                mass,
                law: bpdl_core::sim::SpatialLaw::PointMass { location: loc },
                mode,
            },
            (None, true) | (None, false) => InitialCondition {
                mass,
                law: bpdl_core::sim::SpatialLaw::Uniform,
                mode,
            },
            (Some(_), true) => {
                return Err(PyValueError::new_err(
                    "pass either a location or uniform=True, not both",
                ))
            }
        };
        let observables = if self.spec.dim() == 1 {
            TestFunctionSet::default_1d(self.spec.space())
                .functions()
                .to_vec()
        } else {
            vec![Observable::one(self.spec.dim())]
        };
        let mut init_rng = stream_rng(seed, 0, "init");
        let mut ev_rng = stream_rng(seed, 0, "events");
        let pop = init_population(&self.spec, &init, &mut init_rng).map_err(runtime_err)?;
        let (path, log) = simulate_population(
            &self.spec,
            pop,
            horizon,
            &observables,
            &snapshots,
            &mut ev_rng,
            &SimOptions::default(),
        )
        .map_err(runtime_err)?;
        let out = pyo3::types::PyDict::new(py);
        out.set_item("times", path.times.clone())?;
        out.set_item("mass", path.mass.clone())?;
        let columns: HashMap<String, Vec<f64>> = path
            .labels
            .iter()
            .enumerate()
            .map(|(j, label)| {
                (
                    label.clone(),
                    (0..path.times.len()).map(|m| path.value(m, j)).collect(),
                )
            })
            .collect();
        out.set_item("observables", columns)?;
        out.set_item("events", log.events.len())?;
        Ok(out.into())
    }

    /// Grid solution of the deterministic limit; returns (times, mass).
    #[pyo3(signature = (mass, horizon, times, nodes = 64, dt = 2e-3, location = None))]
    fn meanfield_mass(
        &self,
        mass: f64,
        horizon: f64,
        times: Vec<f64>,
        nodes: usize,
        dt: f64,
        location: Option<Vec<f64>>,
    ) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let _ = horizon;
        let init = match location {
            Some(loc) => InitialCondition::point_mass(mass, loc),
            None => InitialCondition {
                mass,
                law: bpdl_core::sim::SpatialLaw::Uniform,
                mode: bpdl_core::sim::InitMode::Quantized,
            },
        };
        let disc = Discretization::new(&self.spec, nodes).map_err(value_err)?;
        let u0 = disc.initial_density(&init).map_err(value_err)?;
        let mut solve_times = times;
        if solve_times.first() != Some(&0.0) {
            solve_times.insert(0, 0.0);
        }
        let path = disc.integrate(&u0, dt, &solve_times).map_err(runtime_err)?;
        let masses = path
            .states
            .iter()
            .map(|u| disc.grid().mass(u))
            .collect::<Vec<f64>>();
        Ok((path.times, masses))
    }

    /// Limit covariance of the fluctuation field on the default test
    /// functions, as a nested list per requested time.
    #[pyo3(signature = (mass, times, nodes = 64, dt = 5e-3, location = None))]
    fn fluctuation_covariance(
        &self,
        mass: f64,
        times: Vec<f64>,
        nodes: usize,
        dt: f64,
        location: Option<Vec<f64>>,
    ) -> PyResult<Vec<Vec<Vec<f64>>>> {
        if self.spec.dim() != 1 {
            return Err(PyValueError::new_err(
                "covariance projection expects a one-dimensional model",
            ));
        }
        let init = match location {
            Some(loc) => InitialCondition::point_mass(mass, loc),
            None => InitialCondition {
                mass,
                law: bpdl_core::sim::SpatialLaw::Uniform,
                mode: bpdl_core::sim::InitMode::Quantized,
            },
        };
        let horizon = times.iter().copied().fold(0.0, f64::max);
        let disc = Discretization::new(&self.spec, nodes).map_err(value_err)?;
        let u0 = disc.initial_density(&init).map_err(value_err)?;
        let grid_len = disc.grid().len();
        let cov = lyapunov_for_model(
            &disc,
            &u0,
            nalgebra::DMatrix::zeros(grid_len, grid_len),
            horizon,
            dt,
            &times,
        )
        .map_err(runtime_err)?;
        let set = TestFunctionSet::default_1d(self.spec.space());
        let vectors = set.grid_vectors(&disc);
        Ok(cov
            .project(&vectors)
            .into_iter()
            .map(|k| {
                (0..k.nrows())
                    .map(|i| (0..k.ncols()).map(|j| k[(i, j)]).collect())
                    .collect()
            })
            .collect())
    }
}

/// Logistic mass flow `xi' = (b - d - alpha xi) xi` in closed form.
#[pyfunction]
fn logistic(xi0: f64, b: f64, d: f64, alpha: f64, t: f64) -> f64 {
    logistic_closed_form(xi0, b, d, alpha, t)
}

/// Fluctuation variance of the degenerate system at time `t`.
#[pyfunction]
fn ou_variance(b: f64, d: f64, alpha: f64, xi0: f64, t: f64) -> PyResult<f64> {
    let p = OuParams::new(b, d, alpha, xi0, 0.0).map_err(value_err)?;
    Ok(ou1d::variance(&p, t))
}

/// Coefficient triple `(xi_t, theta_t, sigma_t)` of the fluctuation flow.
#[pyfunction]
fn ou_coefficients(b: f64, d: f64, alpha: f64, xi0: f64, t: f64) -> PyResult<(f64, f64, f64)> {
    let p = OuParams::new(b, d, alpha, xi0, 0.0).map_err(value_err)?;
    let c = ou1d::coefficients(&p, t);
    Ok((c.xi, c.theta, c.sigma))
}

/// Characteristic function of the fluctuation at `(z, t)`.
#[pyfunction]
#[pyo3(signature = (b, d, alpha, xi0, z, t, eta0 = 0.0))]
fn ou_char_fn<'py>(
    py: Python<'py>,
    b: f64,
    d: f64,
    alpha: f64,
    xi0: f64,
    z: f64,
    t: f64,
    eta0: f64,
) -> PyResult<Bound<'py, PyComplex>> {
    let p = OuParams::new(b, d, alpha, xi0, eta0).map_err(value_err)?;
    let c = ou1d::char_fn(&p, z, t);
    Ok(PyComplex::from_doubles(py, c.re, c.im))
}

/// Euler-Maruyama path of the scalar fluctuation; returns (times, values).
#[pyfunction]
#[pyo3(signature = (b, d, alpha, xi0, horizon, dt, seed, eta0 = 0.0))]
#[allow(clippy::too_many_arguments)]
fn simulate_ou(
    b: f64,
    d: f64,
    alpha: f64,
    xi0: f64,
    horizon: f64,
    dt: f64,
    seed: u64,
    eta0: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let p = OuParams::new(b, d, alpha, xi0, eta0).map_err(value_err)?;
    let mut rng = stream_rng(seed, 0, "ou");
    let path = ou1d::simulate_ou(&p, horizon, dt, &mut rng).map_err(runtime_err)?;
    Ok((path.times, path.values))
}

/// General finite-sum tail bound for deterministic initial mass.
#[pyfunction]
fn tail_bound_general(
    threshold: f64,
    time: f64,
    scale: u64,
    beta: f64,
    initial_mass: f64,
) -> PyResult<f64> {
    let q = bounds::TailBoundQuery {
        threshold,
        time,
        scale,
        beta,
        initial: bounds::InitialMassLaw::Deterministic { mass: initial_mass },
    };
    Ok(bounds::tail_bound_general(&q).map_err(value_err)?.value)
}

/// Two-term exponential tail bound; raises when the largeness conditions
/// fail.
#[pyfunction]
fn tail_bound_exp(s: f64, t: f64, scale: u64, beta: f64, initial_mass: f64) -> PyResult<f64> {
    let law = bounds::InitialMassLaw::Deterministic { mass: initial_mass };
    Ok(bounds::tail_bound_exp(s, t, scale, beta, &law)
        .map_err(value_err)?
        .value)
}

/// Yule terminal count from `m0` founders at per-capita rate `b_bar`.
#[pyfunction]
fn pure_birth_count(b_bar: f64, m0: u64, s: f64, seed: u64) -> PyResult<u64> {
    let mut rng = stream_rng(seed, 0, "yule");
    bounds::pure_birth_mass_sim(b_bar, m0, s, &mut rng, bounds::YULE_COUNT_CAP).map_err(value_err)
}

/// Hex stream seed for (master, replica, label).
#[pyfunction]
fn derive_seed_hex(master: u64, replica: u64, label: &str) -> String {
    derive_seed(master, replica, label)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Sample moments (mean, variance, skewness, excess kurtosis).
#[pyfunction]
fn sample_moments(xs: Vec<f64>) -> PyResult<(f64, f64, f64, f64)> {
    if xs.len() < 2 {
        return Err(PyValueError::new_err("need at least two samples"));
    }
    Ok((
        stats::mean(&xs),
        stats::variance(&xs),
        stats::skewness(&xs),
        stats::excess_kurtosis(&xs),
    ))
}

#[pymodule]
fn bpdl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(logistic, m)?)?;
    m.add_function(wrap_pyfunction!(ou_variance, m)?)?;
    m.add_function(wrap_pyfunction!(ou_coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(ou_char_fn, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_ou, m)?)?;
    m.add_function(wrap_pyfunction!(tail_bound_general, m)?)?;
    m.add_function(wrap_pyfunction!(tail_bound_exp, m)?)?;
    m.add_function(wrap_pyfunction!(pure_birth_count, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed_hex, m)?)?;
    m.add_function(wrap_pyfunction!(sample_moments, m)?)?;
    Ok(())
}
