use serde::{Deserialize, Serialize};

use super::field::ScalarField;
use super::space::TraitSpace;

/// Test function on the trait space, used to project measures onto scalars.
///
/// Monomials cover the constants and coordinate powers; any rate-field
/// family can be used as well (a Gaussian bump being the usual extra).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    /// Product of per-coordinate powers; all-zero exponents give the
    /// constant function one.
    Monomial { exponents: Vec<u32> },
    /// Any scalar field family.
    Field { field: ScalarField },
}

impl Observable {
    pub fn one(dim: usize) -> Self {
        Observable::Monomial {
            exponents: vec![0; dim],
        }
    }

    /// Coordinate projection `x -> x[axis]`.
    pub fn coordinate(dim: usize, axis: usize) -> Self {
        let mut exponents = vec![0; dim];
        exponents[axis] = 1;
        Observable::Monomial { exponents }
    }

    /// One-dimensional monomial `x -> x^power`.
    pub fn monomial_1d(power: u32) -> Self {
        Observable::Monomial {
            exponents: vec![power],
        }
    }

    pub fn bump(center: Vec<f64>, width: f64, height: f64, floor: f64) -> Self {
        Observable::Field {
            field: ScalarField::GaussianBump {
                center,
                width,
                height,
                floor,
            },
        }
    }

    pub fn eval(&self, space: &TraitSpace, x: &[f64]) -> f64 {
        match self {
            Observable::Monomial { exponents } => exponents
                .iter()
                .zip(x)
                .map(|(&e, &xi)| xi.powi(e as i32))
                .product(),
            Observable::Field { field } => field.eval(space, x),
        }
    }

    /// Supremum bound of `|phi|` over the box.
    pub fn sup_bound(&self, space: &TraitSpace) -> f64 {
        match self {
            Observable::Monomial { exponents } => exponents
                .iter()
                .enumerate()
                .map(|(axis, &e)| {
                    let (l, u) = space.side(axis);
                    l.abs().max(u.abs()).powi(e as i32)
                })
                .product(),
            Observable::Field { field } => space
                .corners()
                .iter()
                .map(|c| field.eval(space, c).abs())
                .fold(field.sup_bound(space).abs(), f64::max),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Observable::Monomial { exponents } => {
                if exponents.iter().all(|&e| e == 0) {
                    "one".to_string()
                } else if exponents.len() == 1 {
                    if exponents[0] == 1 {
                        "x".to_string()
                    } else {
                        format!("x^{}", exponents[0])
                    }
                } else {
                    let body: Vec<String> = exponents
                        .iter()
                        .enumerate()
                        .filter(|(_, &e)| e > 0)
                        .map(|(i, &e)| format!("x{i}^{e}"))
                        .collect();
                    body.join("*")
                }
            }
            Observable::Field { field } => match field {
                ScalarField::Constant { value } => format!("const({value})"),
                ScalarField::Affine { .. } => "affine".to_string(),
                ScalarField::GaussianBump { .. } => "bump".to_string(),
                ScalarField::GridInterpolant { .. } => "grid".to_string(),
            },
        }
    }
}
