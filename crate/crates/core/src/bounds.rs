//! Explicit tail bounds for the total mass through the pure-birth coupling.
//!
//! The population mass is dominated pathwise by a Yule process: ignore all
//! deaths and let every individual breed at the maximal per-capita rate.
//! Chernoff bounds on the Yule passage time give, for `j < [A]` and the
//! unit per-capita time scale,
//!
//! ```text
//! P( <X^n_s, 1> > A ) <=
//!     sum_{m=0}^{n j} exp( (n - m/[A]) (s - ln(1 + [A] (1 - 1/[A]) / (1 + 1/n))) )
//!                     P( <X^n_0, 1> = m/n )
//!   + P( <X^n_0, 1> > j )
//! ```
//!
//! and, with `A = 2 e^{s+t} - 2`, `j = [beta A]` and the largeness
//! conditions below, the two-term form
//! `exp(-n (1 - beta) t) + P( <X^n_0, 1> > [beta A] )`.
//!
//! `[A]` is read as the integer floor throughout; at integer `A` the two
//! readings of "largest integer below" differ by one and floor is adopted
//! uniformly. Rates enter only through the time scale: a maximal rate
//! `b_bar` means querying at `b_bar * s`.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelSpec, Observable};
use crate::sim::{
    init_population, InitialCondition, Population, SimError,
};

/// Yule simulation count cap.
pub const YULE_COUNT_CAP: u64 = 10_000_000;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("bad query: {0}")]
    BadQuery(String),
    #[error("exponential form inapplicable: {0:?}")]
    Inapplicable(ExpFormConditions),
    #[error("pure-birth count cap {0} reached")]
    CountCap(u64),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Law of the initial rescaled mass `<X^n_0, 1>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum InitialMassLaw {
    /// Mass `m0 / n` with certainty (`m0 = round(n * mass)`).
    Deterministic { mass: f64 },
    /// Finite support: `P(mass = masses[i]) = probs[i]`.
    Tabulated { masses: Vec<f64>, probs: Vec<f64> },
}

impl InitialMassLaw {
    fn prob_count_eq(&self, n: u64, m: u64) -> f64 {
        match self {
            InitialMassLaw::Deterministic { mass } => {
                let m0 = (mass * n as f64).round() as u64;
                if m0 == m {
                    1.0
                } else {
                    0.0
                }
            }
            InitialMassLaw::Tabulated { masses, probs } => masses
                .iter()
                .zip(probs)
                .filter(|(mass, _)| ((*mass * n as f64).round() as u64) == m)
                .map(|(_, p)| p)
                .sum(),
        }
    }

    fn prob_mass_gt(&self, threshold: f64) -> f64 {
        match self {
            InitialMassLaw::Deterministic { mass } => {
                if *mass > threshold {
                    1.0
                } else {
                    0.0
                }
            }
            InitialMassLaw::Tabulated { masses, probs } => masses
                .iter()
                .zip(probs)
                .filter(|(mass, _)| **mass > threshold)
                .map(|(_, p)| p)
                .sum(),
        }
    }
}

/// Query for the general finite-sum bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailBoundQuery {
    /// Mass threshold `A`.
    pub threshold: f64,
    /// Time on the unit per-capita scale.
    pub time: f64,
    /// Scale parameter `n`.
    pub scale: u64,
    /// Split point `beta` in (0, 1); the sum runs to `j = [beta A]`.
    pub beta: f64,
    pub initial: InitialMassLaw,
}

/// A probability bound, clamped into `[0, 1]` with a flag when the raw
/// value exceeded one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailBound {
    pub value: f64,
    pub clamped: bool,
}

fn clamp_bound(raw: f64) -> TailBound {
    if raw > 1.0 {
        TailBound {
            value: 1.0,
            clamped: true,
        }
    } else {
        TailBound {
            value: raw.max(0.0),
            clamped: false,
        }
    }
}

/// The exact finite sum of the general tail bound.
pub fn tail_bound_general(q: &TailBoundQuery) -> Result<TailBound, BoundsError> {
    if !(q.threshold >= 1.0) {
        return Err(BoundsError::BadQuery(format!(
            "threshold A = {} must be at least 1",
            q.threshold
        )));
    }
    if !(q.beta > 0.0 && q.beta < 1.0) {
        return Err(BoundsError::BadQuery("beta must lie in (0, 1)".into()));
    }
    if q.scale == 0 || q.time < 0.0 {
        return Err(BoundsError::BadQuery("need n >= 1 and time >= 0".into()));
    }
    let floor_a = q.threshold.floor();
    let j = (q.beta * q.threshold).floor();
    if !(j < floor_a) {
        return Err(BoundsError::BadQuery(format!(
            "need j = [beta A] = {j} below [A] = {floor_a}"
        )));
    }
    let n = q.scale as f64;
    let log_factor = q.time - (1.0 + floor_a * (1.0 - 1.0 / floor_a) / (1.0 + 1.0 / n)).ln();
    let m_max = (n * j).floor() as u64;
    let mut sum = 0.0;
    for m in 0..=m_max {
        let p = q.initial.prob_count_eq(q.scale, m);
        if p == 0.0 {
            continue;
        }
        sum += ((n - m as f64 / floor_a) * log_factor).exp() * p;
    }
    sum += q.initial.prob_mass_gt(j);
    Ok(clamp_bound(sum))
}

/// Largeness conditions of the exponential form, reported so an
/// inapplicable query refuses instead of extrapolating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFormConditions {
    pub threshold: f64,
    pub floor_a: f64,
    /// `[A] (1 - 1/[A]) / (1 + 1/n) > A / 2`.
    pub rate_condition: bool,
    /// `s < ln(1 + [A] / 2)`.
    pub log_condition: bool,
    /// `[beta A] < [A]`.
    pub split_condition: bool,
}

/// Threshold induced by the exponential form, `A = 2 e^{s + t} - 2`.
pub fn exp_form_threshold(s: f64, t: f64) -> f64 {
    2.0 * (s + t).exp() - 2.0
}

/// Two-term exponential bound `e^{-n (1 - beta) t} + P(init > [beta A])`.
pub fn tail_bound_exp(
    s: f64,
    t: f64,
    scale: u64,
    beta: f64,
    initial: &InitialMassLaw,
) -> Result<TailBound, BoundsError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(BoundsError::BadQuery("beta must lie in (0, 1)".into()));
    }
    if !(t > 0.0) || s < 0.0 || scale == 0 {
        return Err(BoundsError::BadQuery(
            "need t > 0, s >= 0 and n >= 1".into(),
        ));
    }
    let a = exp_form_threshold(s, t);
    let floor_a = a.floor();
    let n = scale as f64;
    let conditions = ExpFormConditions {
        threshold: a,
        floor_a,
        rate_condition: floor_a >= 1.0
            && floor_a * (1.0 - 1.0 / floor_a) / (1.0 + 1.0 / n) > a / 2.0,
        log_condition: s < (1.0 + floor_a / 2.0).ln(),
        split_condition: (beta * a).floor() < floor_a,
    };
    if !(conditions.rate_condition && conditions.log_condition && conditions.split_condition) {
        return Err(BoundsError::Inapplicable(conditions));
    }
    let j = (beta * a).floor();
    let raw = (-n * (1.0 - beta) * t).exp() + initial.prob_mass_gt(j);
    Ok(clamp_bound(raw))
}

/// Terminal count of a Yule process with per-capita rate `b_bar`, run to
/// time `s` from `m0` individuals by sequential exponential clocks.
pub fn pure_birth_mass_sim<R: Rng>(
    b_bar: f64,
    m0: u64,
    s: f64,
    rng: &mut R,
    cap: u64,
) -> Result<u64, BoundsError> {
    if m0 == 0 {
        return Err(BoundsError::BadQuery("need at least one founder".into()));
    }
    if !(b_bar > 0.0) || s < 0.0 {
        return Err(BoundsError::BadQuery("need b_bar > 0 and s >= 0".into()));
    }
    let mut count = m0;
    let mut t = 0.0;
    loop {
        let wait = Exp::new(b_bar * count as f64)
            .expect("positive rate")
            .sample(rng);
        t += wait;
        if t > s {
            return Ok(count);
        }
        count += 1;
        if count >= cap {
            return Err(BoundsError::CountCap(cap));
        }
    }
}

/// Coupled trajectory: the population and its dominating Yule count on a
/// common event clock.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledCounts {
    pub times: Vec<f64>,
    pub population: Vec<u64>,
    pub yule: Vec<u64>,
}

/// Thinning construction of the domination coupling.
///
/// The driving stream is the Yule birth clock at rate `b_bar * yule`, plus
/// the population's own death clocks. Every stream birth increments the
/// Yule count; it also triggers a population birth with probability
/// `sum_i b(x_i) / (b_bar * yule)`, which is a genuine probability because
/// the population never outnumbers its dominator. Deaths touch only the
/// population, so `population <= yule` holds at every event time.
pub fn coupled_yule_run<R: Rng>(
    spec: &ModelSpec,
    init: &InitialCondition,
    horizon: f64,
    rng: &mut R,
) -> Result<CoupledCounts, BoundsError> {
    let b_bar = spec.bounds().birth_sup;
    let mut pop = init_population(spec, init, rng)?;
    let mut yule = pop.len() as u64;
    let mut out = CoupledCounts {
        times: vec![0.0],
        population: vec![pop.len() as u64],
        yule: vec![yule],
    };
    let mut t = 0.0;
    loop {
        let rates = pop.total_rate();
        let yule_rate = b_bar * yule as f64;
        let death_rate = rates.natural_death + rates.competition;
        let total = yule_rate + death_rate;
        if total <= 0.0 {
            break;
        }
        let dt = Exp::new(total).expect("positive rate").sample(rng);
        t += dt;
        if t > horizon {
            break;
        }
        if rng.random::<f64>() * total < yule_rate {
            yule += 1;
            if yule >= YULE_COUNT_CAP {
                return Err(BoundsError::CountCap(YULE_COUNT_CAP));
            }
            // Thinning: accept a population birth at the true rate.
            if rng.random::<f64>() * yule_rate < rates.birth {
                birth_in_place(&mut pop, spec, rng)?;
            }
        } else {
            death_in_place(&mut pop, spec, rates.natural_death, rates.competition, rng);
        }
        out.times.push(t);
        out.population.push(pop.len() as u64);
        out.yule.push(yule);
    }
    Ok(out)
}

fn birth_in_place<R: Rng>(
    pop: &mut Population,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<(), BoundsError> {
    use crate::sim::{step_birth_for_coupling};
    step_birth_for_coupling(pop, spec, rng)?;
    Ok(())
}

fn death_in_place<R: Rng>(
    pop: &mut Population,
    spec: &ModelSpec,
    natural: f64,
    competition: f64,
    rng: &mut R,
) {
    crate::sim::step_death_for_coupling(pop, spec, natural, competition, rng);
}

/// Monte-Carlo estimate of `P(mass at time s > threshold)` for the
/// population started from `init`.
pub fn mc_mass_tail<R: Rng>(
    spec: &ModelSpec,
    init: &InitialCondition,
    s: f64,
    threshold: f64,
    replicas: usize,
    rng: &mut R,
) -> Result<(f64, f64), BoundsError> {
    let mut hits = 0usize;
    for _ in 0..replicas {
        let pop = init_population(spec, init, rng)?;
        let (path, _log) = crate::sim::simulate_population(
            spec,
            pop,
            s,
            &[Observable::one(spec.dim())],
            &[s],
            rng,
            &crate::sim::SimOptions::default(),
        )?;
        if path.mass[0] > threshold {
            hits += 1;
        }
    }
    let p = hits as f64 / replicas as f64;
    let se = (p * (1.0 - p) / replicas as f64).sqrt();
    Ok((p, se))
}
