//! Property tests for the model primitives and the scalar flows.

use bpdl_core::meanfield::logistic_closed_form;
use bpdl_core::model::{
    DispersalKernel, KernelTerm, ScalarField, SeparableKernel, TraitSpace, DEFAULT_MAX_REJECTIONS,
};
use bpdl_core::quad::adaptive_simpson;
use bpdl_core::stats;
use proptest::prelude::*;

fn positive_field() -> impl Strategy<Value = ScalarField> {
    prop_oneof![
        (0.1f64..5.0).prop_map(|value| ScalarField::Constant { value }),
        ((-0.9f64..0.9), (1.0f64..3.0)).prop_map(|(a, c)| ScalarField::Affine {
            slope: vec![a],
            intercept: c,
        }),
        ((0.0f64..1.0), (0.05f64..0.5), (0.0f64..2.0), (0.1f64..2.0)).prop_map(
            |(center, width, height, floor)| ScalarField::GaussianBump {
                center: vec![center],
                width,
                height,
                floor,
            }
        ),
    ]
}

proptest! {
    #[test]
    fn field_values_respect_certified_bounds(field in positive_field(), x in 0.0f64..=1.0) {
        let space = TraitSpace::unit_interval();
        let v = field.eval(&space, &[x]);
        prop_assert!(v > 0.0, "field value {v} not positive");
        prop_assert!(v <= field.sup_bound(&space) + 1e-12, "value {v} above bound");
    }

    #[test]
    fn kernel_eval_matches_cached_factor_route(
        f1 in positive_field(),
        g1 in positive_field(),
        f2 in positive_field(),
        g2 in positive_field(),
        x in 0.0f64..=1.0,
        y in 0.0f64..=1.0,
    ) {
        let space = TraitSpace::unit_interval();
        let kernel = SeparableKernel::new(vec![
            KernelTerm { f: f1, g: g1 },
            KernelTerm { f: f2, g: g2 },
        ]);
        let direct = kernel.eval(&space, &[x], &[y]);
        let mut fx = [0.0; 2];
        let mut gy = [0.0; 2];
        kernel.eval_f(&space, &[x], &mut fx);
        kernel.eval_g(&space, &[y], &mut gy);
        let cached: f64 = fx.iter().zip(&gy).map(|(a, b)| a * b).sum();
        let rel = (direct - cached).abs() / direct.abs().max(1e-300);
        prop_assert!(rel <= 1e-12, "term-by-term {direct} vs cached {cached}");
        prop_assert!(direct >= 0.0);
        prop_assert!(direct <= kernel.sup_bound(&space) + 1e-12);
    }

    #[test]
    fn logistic_flow_is_monotone_and_consistent(
        xi0 in 0.01f64..3.0,
        b in 1.1f64..4.0,
        d_frac in 0.05f64..0.9,
        alpha in 0.2f64..3.0,
        s in 0.01f64..5.0,
        t in 0.01f64..5.0,
    ) {
        let d = b * d_frac;
        let eq = (b - d) / alpha;
        let xi_s = logistic_closed_form(xi0, b, d, alpha, s);
        // Stays between the start and the equilibrium.
        prop_assert!(xi_s >= xi0.min(eq) - 1e-12 && xi_s <= xi0.max(eq) + 1e-12);
        // Semigroup property.
        let two_step = logistic_closed_form(xi_s, b, d, alpha, t);
        let one_step = logistic_closed_form(xi0, b, d, alpha, s + t);
        prop_assert!((two_step - one_step).abs() <= 1e-9 * (1.0 + one_step.abs()));
    }

    #[test]
    fn dispersal_samples_always_admissible(
        x in 0.0f64..=1.0,
        sigma in 0.02f64..0.6,
        seed in 0u64..1000,
    ) {
        use rand::SeedableRng;
        let space = TraitSpace::unit_interval();
        let kernel = DispersalKernel::TruncatedGaussian { sigma };
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let z = kernel.sample(&space, &[x], &mut rng, DEFAULT_MAX_REJECTIONS).unwrap();
            prop_assert!((0.0..=1.0).contains(&(x + z[0])));
        }
    }
}

/// Chi-square goodness of fit of the dispersal sampler against the
/// renormalized density, fixed bins, significance 0.01.
fn chi_square_dispersal(kernel: &DispersalKernel, x: f64, seed: u64) -> f64 {
    use rand::SeedableRng;
    let space = TraitSpace::unit_interval();
    let draws = 100_000;
    let bins = 40;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let mut observed = vec![0u64; bins];
    for _ in 0..draws {
        let z = kernel
            .sample(&space, &[x], &mut rng, DEFAULT_MAX_REJECTIONS)
            .unwrap();
        let target = x + z[0];
        let idx = ((target * bins as f64) as usize).min(bins - 1);
        observed[idx] += 1;
    }
    let expected: Vec<f64> = (0..bins)
        .map(|i| {
            let lo = i as f64 / bins as f64;
            let hi = (i + 1) as f64 / bins as f64;
            draws as f64
                * adaptive_simpson(
                    |y| {
                        kernel
                            .density(&space, &[x], &[y - x])
                            .unwrap()
                            .unwrap_or(0.0)
                    },
                    lo,
                    hi,
                    1e-10,
                )
        })
        .collect();
    stats::chi_square_pvalue(&observed, &expected)
}

#[test]
fn dispersal_sampler_passes_chi_square() {
    let cases = [
        (DispersalKernel::TruncatedGaussian { sigma: 0.15 }, 0.5, 11),
        (DispersalKernel::TruncatedGaussian { sigma: 0.15 }, 0.02, 12),
        (DispersalKernel::UniformBall { radius: 0.25 }, 0.5, 13),
        (DispersalKernel::UniformBall { radius: 0.25 }, 0.1, 14),
    ];
    for (kernel, x, seed) in cases {
        let p = chi_square_dispersal(&kernel, x, seed);
        println!("chi-square p = {p:.4} for {kernel:?} at x = {x}");
        assert!(
            p >= 0.01,
            "sampler rejected at significance 0.01: p = {p} for {kernel:?} at x = {x}"
        );
    }
}
