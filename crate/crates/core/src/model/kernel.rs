use serde::{Deserialize, Serialize};

use super::field::ScalarField;
use super::space::TraitSpace;

/// Separable competition kernel `alpha(x, y) = sum_k f_k(x) g_k(y)` with
/// nonnegative smooth factors.
///
/// Separability is what lets the simulator maintain total competition rates
/// in `O(#terms)` per event instead of `O(population^2)`. Only this form is
/// accepted; any smooth kernel can be approximated in supremum norm by such
/// sums, so nothing of practical interest is lost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableKernel {
    pub terms: Vec<KernelTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTerm {
    pub f: ScalarField,
    pub g: ScalarField,
}

impl SeparableKernel {
    pub fn new(terms: Vec<KernelTerm>) -> Self {
        Self { terms }
    }

    /// Constant kernel `alpha(x, y) = value`, as a single term.
    pub fn constant(value: f64) -> Self {
        Self::new(vec![KernelTerm {
            f: ScalarField::constant(value),
            g: ScalarField::constant(1.0),
        }])
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn eval(&self, space: &TraitSpace, x: &[f64], y: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.f.eval(space, x) * t.g.eval(space, y))
            .sum()
    }

    /// `f_k(x)` for every term, written into `out` (length `n_terms`).
    pub fn eval_f(&self, space: &TraitSpace, x: &[f64], out: &mut [f64]) {
        for (slot, term) in out.iter_mut().zip(&self.terms) {
            *slot = term.f.eval(space, x);
        }
    }

    /// `g_k(y)` for every term, written into `out` (length `n_terms`).
    pub fn eval_g(&self, space: &TraitSpace, y: &[f64], out: &mut [f64]) {
        for (slot, term) in out.iter_mut().zip(&self.terms) {
            *slot = term.g.eval(space, y);
        }
    }

    /// Certified bound `sum_k sup f_k * sup g_k`.
    pub fn sup_bound(&self, space: &TraitSpace) -> f64 {
        self.terms
            .iter()
            .map(|t| t.f.sup_bound(space) * t.g.sup_bound(space))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn coord() -> ScalarField {
        ScalarField::Affine {
            slope: vec![1.0],
            intercept: 0.0,
        }
    }

    #[test]
    fn constant_kernel() {
        let s = TraitSpace::unit_interval();
        let k = SeparableKernel::constant(1.0);
        assert_relative_eq!(k.eval(&s, &[0.1], &[0.9]), 1.0);
    }

    #[test]
    fn one_term_product() {
        let s = TraitSpace::unit_interval();
        let k = SeparableKernel::new(vec![KernelTerm {
            f: coord(),
            g: coord(),
        }]);
        assert_relative_eq!(k.eval(&s, &[0.5], &[0.2]), 0.1);
    }

    #[test]
    fn two_term_sum_of_products() {
        let s = TraitSpace::unit_interval();
        let k = SeparableKernel::new(vec![
            KernelTerm {
                f: ScalarField::constant(1.0),
                g: ScalarField::constant(1.0),
            },
            KernelTerm {
                f: coord(),
                g: coord(),
            },
        ]);
        assert_relative_eq!(k.eval(&s, &[0.5], &[0.2]), 1.1);
        assert_relative_eq!(k.sup_bound(&s), 2.0);
    }
}
