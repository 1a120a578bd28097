//! Model parameters of the regulated population: trait space, birth and
//! death rate fields, separable competition kernel, and dispersal kernel.
//!
//! A [`ModelSpec`] is immutable once built. Construction runs the full
//! validation lattice sweep and caches the certified rate bounds, so every
//! consumer downstream can rely on positivity, boundedness and the growth
//! condition `b(x) - d(x) > 0` without rechecking.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod dispersal;
pub mod field;
pub mod kernel;
pub mod observable;
pub mod space;

pub use dispersal::{DispersalKernel, DEFAULT_MAX_REJECTIONS};
pub use field::ScalarField;
pub use kernel::{KernelTerm, SeparableKernel};
pub use observable::Observable;
pub use space::TraitSpace;

use crate::quad::adaptive_simpson;

/// Default validation lattice resolution per dimension.
pub const DEFAULT_LATTICE_PER_DIM: usize = 512;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid trait space: {0}")]
    BadSpace(String),
    #[error("invalid field: {0}")]
    BadField(String),
    #[error("point {point:?} outside the trait space")]
    OutOfDomain { point: Vec<f64> },
    #[error("model validation failed: {summary}")]
    Validation {
        summary: String,
        report: Box<ValidationReport>,
    },
    #[error("sampling failed: {detail}")]
    Sampling { detail: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// Certified rate bounds cached on a validated model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBounds {
    /// Supremum of the birth rate over the box.
    pub birth_sup: f64,
    /// Supremum of the death rate over the box.
    pub death_sup: f64,
    /// Supremum of the competition kernel, `sum_k sup f_k * sup g_k`.
    pub alpha_sup: f64,
    /// Minimum of `b(x) - d(x)` over the validation lattice.
    pub growth_margin: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Witness {
    pub point: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub pass: bool,
    pub witness: Option<Witness>,
    pub detail: String,
}

/// Outcome of the lattice sweep. Failures are reported, never thrown.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<InvariantCheck>,
    pub bounds: RateBounds,
    pub lattice_per_dim: usize,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &InvariantCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }

    fn summary(&self) -> String {
        let failed: Vec<&str> = self
            .failures()
            .map(|c| c.name.as_str())
            .collect();
        if failed.is_empty() {
            "all checks passed".to_string()
        } else {
            failed.join(", ")
        }
    }
}

/// Complete parameter set of the particle system at scale `n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    space: TraitSpace,
    birth: ScalarField,
    death: ScalarField,
    competition: SeparableKernel,
    dispersal: DispersalKernel,
    scale: u64,
    bounds: RateBounds,
}

impl ModelSpec {
    /// Validate the parts on the default lattice and build the spec.
    pub fn new(
        space: TraitSpace,
        birth: ScalarField,
        death: ScalarField,
        competition: SeparableKernel,
        dispersal: DispersalKernel,
        scale: u64,
    ) -> Result<Self, ModelError> {
        Self::with_lattice(
            space,
            birth,
            death,
            competition,
            dispersal,
            scale,
            DEFAULT_LATTICE_PER_DIM,
        )
    }

    pub fn with_lattice(
        space: TraitSpace,
        birth: ScalarField,
        death: ScalarField,
        competition: SeparableKernel,
        dispersal: DispersalKernel,
        scale: u64,
        lattice_per_dim: usize,
    ) -> Result<Self, ModelError> {
        if scale == 0 {
            return Err(ModelError::BadField("scale n must be positive".into()));
        }
        let report = validate(
            &space,
            &birth,
            &death,
            &competition,
            &dispersal,
            lattice_per_dim,
        );
        if !report.all_pass() {
            return Err(ModelError::Validation {
                summary: report.summary(),
                report: Box::new(report),
            });
        }
        let bounds = report.bounds;
        Ok(Self {
            space,
            birth,
            death,
            competition,
            dispersal,
            scale,
            bounds,
        })
    }

    /// The degenerate single-site configuration: constant rates, no
    /// dispersal. Mass then follows the scalar logistic flow.
    pub fn degenerate(b: f64, d: f64, alpha: f64, scale: u64) -> Result<Self, ModelError> {
        Self::new(
            TraitSpace::unit_interval(),
            ScalarField::constant(b),
            ScalarField::constant(d),
            SeparableKernel::constant(alpha),
            DispersalKernel::PointMass,
            scale,
        )
    }

    pub fn space(&self) -> &TraitSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn birth(&self) -> &ScalarField {
        &self.birth
    }

    pub fn death(&self) -> &ScalarField {
        &self.death
    }

    pub fn competition(&self) -> &SeparableKernel {
        &self.competition
    }

    pub fn dispersal(&self) -> &DispersalKernel {
        &self.dispersal
    }

    pub fn scale(&self) -> u64 {
        self.scale
    }

    pub fn bounds(&self) -> RateBounds {
        self.bounds
    }

    /// Same model at a different scale; rate fields are scale free.
    pub fn at_scale(&self, scale: u64) -> ModelSpec {
        let mut spec = self.clone();
        spec.scale = scale.max(1);
        spec
    }

    pub fn eval_birth(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.check_domain(x)?;
        Ok(self.birth_at(x))
    }

    pub fn eval_death(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.check_domain(x)?;
        Ok(self.death_at(x))
    }

    pub fn eval_alpha(&self, x: &[f64], y: &[f64]) -> Result<f64, ModelError> {
        self.check_domain(x)?;
        self.check_domain(y)?;
        Ok(self.competition.eval(&self.space, x, y))
    }

    pub fn sample_dispersal<R: rand::Rng>(
        &self,
        x: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>, ModelError> {
        self.check_domain(x)?;
        self.dispersal
            .sample(&self.space, x, rng, DEFAULT_MAX_REJECTIONS)
    }

    /// Unchecked field evaluation; callers guarantee `x` is in the space.
    pub(crate) fn birth_at(&self, x: &[f64]) -> f64 {
        debug_assert!(self.space.contains(x));
        self.birth.eval(&self.space, x)
    }

    pub(crate) fn death_at(&self, x: &[f64]) -> f64 {
        debug_assert!(self.space.contains(x));
        self.death.eval(&self.space, x)
    }

    fn check_domain(&self, x: &[f64]) -> Result<(), ModelError> {
        if self.space.contains(x) {
            Ok(())
        } else {
            Err(ModelError::OutOfDomain { point: x.to_vec() })
        }
    }
}

/// Run the invariant sweep over the validation lattice.
///
/// Reported checks: positivity and supremum consistency of the rate fields,
/// nonnegativity of every kernel factor, the pointwise kernel bound, the
/// growth condition, and dispersal normalization on a coarse sublattice.
pub fn validate(
    space: &TraitSpace,
    birth: &ScalarField,
    death: &ScalarField,
    competition: &SeparableKernel,
    dispersal: &DispersalKernel,
    lattice_per_dim: usize,
) -> ValidationReport {
    let mut checks = Vec::new();

    for (name, field) in [("birth", birth), ("death", death)] {
        if let Err(e) = field.check_shape(space) {
            checks.push(InvariantCheck {
                name: format!("{name}_shape"),
                pass: false,
                witness: None,
                detail: e,
            });
        }
    }
    for (k, term) in competition.terms.iter().enumerate() {
        for (side, f) in [("f", &term.f), ("g", &term.g)] {
            if let Err(e) = f.check_shape(space) {
                checks.push(InvariantCheck {
                    name: format!("kernel[{k}].{side}_shape"),
                    pass: false,
                    witness: None,
                    detail: e,
                });
            }
        }
    }
    if let Err(e) = dispersal.check_shape(space) {
        checks.push(InvariantCheck {
            name: "dispersal_shape".into(),
            pass: false,
            witness: None,
            detail: e,
        });
    }
    if competition.terms.is_empty() {
        checks.push(InvariantCheck {
            name: "kernel_nonempty".into(),
            pass: false,
            witness: None,
            detail: "competition kernel needs at least one separable term".into(),
        });
    }
    if !checks.is_empty() {
        // Shape errors make the sweep itself ill-defined; stop here.
        return ValidationReport {
            checks,
            bounds: RateBounds {
                birth_sup: f64::NAN,
                death_sup: f64::NAN,
                alpha_sup: f64::NAN,
                growth_margin: f64::NAN,
            },
            lattice_per_dim,
        };
    }

    let birth_sup = birth.sup_bound(space);
    let death_sup = death.sup_bound(space);
    let alpha_sup = competition.sup_bound(space);

    // Lattice sweep for the field invariants.
    let mut birth_min = (f64::INFINITY, Vec::new());
    let mut death_min = (f64::INFINITY, Vec::new());
    let mut margin_min = (f64::INFINITY, Vec::new());
    let mut birth_over = None;
    let mut death_over = None;
    let mut factor_min: Vec<(f64, Vec<f64>)> = competition
        .terms
        .iter()
        .flat_map(|_| [(f64::INFINITY, Vec::new()), (f64::INFINITY, Vec::new())])
        .collect();
    for x in space.lattice(lattice_per_dim) {
        let b = birth.eval(space, &x);
        let d = death.eval(space, &x);
        if b < birth_min.0 {
            birth_min = (b, x.clone());
        }
        if d < death_min.0 {
            death_min = (d, x.clone());
        }
        if b - d < margin_min.0 {
            margin_min = (b - d, x.clone());
        }
        if b > birth_sup + 1e-12 && birth_over.is_none() {
            birth_over = Some(Witness {
                point: x.clone(),
                value: b,
            });
        }
        if d > death_sup + 1e-12 && death_over.is_none() {
            death_over = Some(Witness {
                point: x.clone(),
                value: d,
            });
        }
        for (k, term) in competition.terms.iter().enumerate() {
            let fv = term.f.eval(space, &x);
            let gv = term.g.eval(space, &x);
            if fv < factor_min[2 * k].0 {
                factor_min[2 * k] = (fv, x.clone());
            }
            if gv < factor_min[2 * k + 1].0 {
                factor_min[2 * k + 1] = (gv, x.clone());
            }
        }
    }

    checks.push(check_min(
        "birth_positive",
        birth_min,
        |v| v > 0.0,
        "b(x) > 0 on the lattice",
    ));
    checks.push(check_min(
        "death_positive",
        death_min,
        |v| v > 0.0,
        "d(x) > 0 on the lattice",
    ));
    checks.push(InvariantCheck {
        name: "birth_sup_consistent".into(),
        pass: birth_over.is_none(),
        witness: birth_over,
        detail: format!("b(x) <= certified bound {birth_sup}"),
    });
    checks.push(InvariantCheck {
        name: "death_sup_consistent".into(),
        pass: death_over.is_none(),
        witness: death_over,
        detail: format!("d(x) <= certified bound {death_sup}"),
    });
    checks.push(check_min(
        "a2_growth_margin",
        margin_min.clone(),
        |v| v > 0.0,
        "min b(x) - d(x) > 0 on the lattice",
    ));
    for (k, _) in competition.terms.iter().enumerate() {
        checks.push(check_min(
            &format!("kernel[{k}].f_nonnegative"),
            factor_min[2 * k].clone(),
            |v| v >= 0.0,
            "kernel factor f >= 0 on the lattice",
        ));
        checks.push(check_min(
            &format!("kernel[{k}].g_nonnegative"),
            factor_min[2 * k + 1].clone(),
            |v| v >= 0.0,
            "kernel factor g >= 0 on the lattice",
        ));
    }

    // Pointwise kernel bound on a coarse pair sublattice.
    let pair_res = if space.dim() == 1 { 128 } else { 16 };
    let pair_points: Vec<Vec<f64>> = space.lattice(pair_res).collect();
    let mut alpha_over = None;
    let mut alpha_neg = None;
    'outer: for x in &pair_points {
        for y in &pair_points {
            let a = competition.eval(space, x, y);
            if a > alpha_sup + 1e-12 {
                alpha_over = Some(Witness {
                    point: x.clone(),
                    value: a,
                });
                break 'outer;
            }
            if a < -1e-12 {
                alpha_neg = Some(Witness {
                    point: x.clone(),
                    value: a,
                });
                break 'outer;
            }
        }
    }
    checks.push(InvariantCheck {
        name: "alpha_bounded".into(),
        pass: alpha_over.is_none(),
        witness: alpha_over,
        detail: format!("alpha(x, y) <= certified bound {alpha_sup}"),
    });
    checks.push(InvariantCheck {
        name: "alpha_nonnegative".into(),
        pass: alpha_neg.is_none(),
        witness: alpha_neg,
        detail: "alpha(x, y) >= 0 on the pair sublattice".into(),
    });

    // Dispersal normalization by independent quadrature (1-d only; the
    // degenerate family is trivially normalized).
    if !dispersal.is_point_mass() && space.dim() == 1 {
        let mut worst: Option<Witness> = None;
        let (l, u) = space.side(0);
        for x in space.lattice(33) {
            let mass = adaptive_simpson(
                |z| {
                    dispersal
                        .density(space, &x, &[z])
                        .ok()
                        .flatten()
                        .unwrap_or(0.0)
                },
                l - u,
                u - l,
                1e-11,
            );
            if (mass - 1.0).abs() > 1e-7 {
                worst = Some(Witness {
                    point: x,
                    value: mass,
                });
                break;
            }
        }
        checks.push(InvariantCheck {
            name: "dispersal_normalized".into(),
            pass: worst.is_none(),
            witness: worst,
            detail: "integral of m(x, .) over the admissible set is 1".into(),
        });
    }

    ValidationReport {
        checks,
        bounds: RateBounds {
            birth_sup,
            death_sup,
            alpha_sup,
            growth_margin: margin_min.0,
        },
        lattice_per_dim,
    }
}

fn check_min(
    name: &str,
    min: (f64, Vec<f64>),
    ok: impl Fn(f64) -> bool,
    detail: &str,
) -> InvariantCheck {
    let pass = ok(min.0);
    InvariantCheck {
        name: name.to_string(),
        pass,
        witness: if pass {
            None
        } else {
            Some(Witness {
                point: min.1,
                value: min.0,
            })
        },
        detail: format!("{detail} (lattice min {})", min.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a2_margin_pass_and_fail() {
        let ok = validate(
            &TraitSpace::unit_interval(),
            &ScalarField::constant(2.0),
            &ScalarField::constant(1.0),
            &SeparableKernel::constant(1.0),
            &DispersalKernel::PointMass,
            64,
        );
        assert!(ok.all_pass());
        assert!((ok.bounds.growth_margin - 1.0).abs() < 1e-12);

        let bad = validate(
            &TraitSpace::unit_interval(),
            &ScalarField::constant(1.0),
            &ScalarField::constant(2.0),
            &SeparableKernel::constant(1.0),
            &DispersalKernel::PointMass,
            64,
        );
        assert!(!bad.all_pass());
        let failed: Vec<_> = bad.failures().map(|c| c.name.clone()).collect();
        assert!(failed.contains(&"a2_growth_margin".to_string()));
    }

    #[test]
    fn negative_kernel_factor_has_witness() {
        let report = validate(
            &TraitSpace::unit_interval(),
            &ScalarField::constant(2.0),
            &ScalarField::constant(1.0),
            &SeparableKernel::new(vec![KernelTerm {
                f: ScalarField::Affine {
                    slope: vec![1.0],
                    intercept: -0.5,
                },
                g: ScalarField::constant(1.0),
            }]),
            &DispersalKernel::PointMass,
            64,
        );
        assert!(!report.all_pass());
        let check = report
            .failures()
            .find(|c| c.name == "kernel[0].f_nonnegative")
            .expect("factor check failed");
        let w = check.witness.as_ref().unwrap();
        assert!(w.point[0] < 0.5);
        assert!(w.value < 0.0);
    }

    #[test]
    fn spec_construction_caches_bounds() {
        let spec = ModelSpec::degenerate(2.0, 1.0, 1.0, 100).unwrap();
        let b = spec.bounds();
        assert_eq!(b.birth_sup, 2.0);
        assert_eq!(b.death_sup, 1.0);
        assert_eq!(b.alpha_sup, 1.0);
        assert_eq!(spec.eval_birth(&[0.2]).unwrap(), 2.0);
        assert!(spec.eval_birth(&[1.5]).is_err());
    }

    #[test]
    fn eval_alpha_ops() {
        let spec = ModelSpec::new(
            TraitSpace::unit_interval(),
            ScalarField::constant(2.0),
            ScalarField::constant(1.0),
            SeparableKernel::new(vec![
                KernelTerm {
                    f: ScalarField::constant(1.0),
                    g: ScalarField::constant(1.0),
                },
                KernelTerm {
                    f: ScalarField::Affine {
                        slope: vec![1.0],
                        intercept: 0.0,
                    },
                    g: ScalarField::Affine {
                        slope: vec![1.0],
                        intercept: 0.0,
                    },
                },
            ]),
            DispersalKernel::PointMass,
            10,
        )
        .unwrap();
        assert!((spec.eval_alpha(&[0.5], &[0.2]).unwrap() - 1.1).abs() < 1e-15);
    }
}
