use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use super::space::TraitSpace;
use super::ModelError;
use crate::quad::adaptive_simpson;

/// Iteration cap for rejection sampling of restricted displacements.
pub const DEFAULT_MAX_REJECTIONS: u32 = 100_000;

/// Dispersal law for offspring displacement `z` from a parent at `x`.
///
/// The base family density is restricted to the admissible set
/// `{z : x + z in the trait space}` and renormalized per source point, so the
/// displacement density integrates to one wherever the parent sits. Sampling
/// rejects draws from the untruncated base family, which realises exactly the
/// renormalized law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DispersalKernel {
    /// Children inherit the parent trait exactly (`z = 0`).
    PointMass,
    /// Isotropic centered Gaussian displacement with deviation `sigma`.
    TruncatedGaussian { sigma: f64 },
    /// Uniform displacement on the centered Euclidean ball of given radius.
    UniformBall { radius: f64 },
}

impl DispersalKernel {
    pub fn is_point_mass(&self) -> bool {
        matches!(self, DispersalKernel::PointMass)
    }

    pub fn check_shape(&self, space: &TraitSpace) -> Result<(), String> {
        match self {
            DispersalKernel::PointMass => Ok(()),
            DispersalKernel::TruncatedGaussian { sigma } => {
                if *sigma > 0.0 {
                    Ok(())
                } else {
                    Err("truncated_gaussian sigma must be positive".into())
                }
            }
            DispersalKernel::UniformBall { radius } => {
                if *radius <= 0.0 {
                    return Err("uniform_ball radius must be positive".into());
                }
                if space.dim() > 2 {
                    return Err("uniform_ball density is only supported for dim <= 2".into());
                }
                Ok(())
            }
        }
    }

    /// Normalization `Z(x)`, the base-family mass of the admissible set.
    ///
    /// Gaussian and one-dimensional ball have closed forms; the
    /// two-dimensional ball integrates chord lengths.
    pub fn normalization(&self, space: &TraitSpace, x: &[f64]) -> Result<f64, ModelError> {
        match self {
            DispersalKernel::PointMass => Ok(1.0),
            DispersalKernel::TruncatedGaussian { sigma } => {
                let mut z = 1.0;
                for axis in 0..space.dim() {
                    let (l, u) = space.side(axis);
                    z *= normal_cdf((u - x[axis]) / sigma) - normal_cdf((l - x[axis]) / sigma);
                }
                Ok(z)
            }
            DispersalKernel::UniformBall { radius } => match space.dim() {
                1 => {
                    let (l, u) = space.side(0);
                    let lo = (l - x[0]).max(-radius);
                    let hi = (u - x[0]).min(*radius);
                    Ok(((hi - lo).max(0.0)) / (2.0 * radius))
                }
                2 => {
                    let r = *radius;
                    let (l0, u0) = space.side(0);
                    let (l1, u1) = space.side(1);
                    let lo = (l0 - x[0]).max(-r);
                    let hi = (u0 - x[0]).min(r);
                    if hi <= lo {
                        return Ok(0.0);
                    }
                    let area = adaptive_simpson(
                        |z0| {
                            let half = (r * r - z0 * z0).max(0.0).sqrt();
                            let a = (l1 - x[1]).max(-half);
                            let b = (u1 - x[1]).min(half);
                            (b - a).max(0.0)
                        },
                        lo,
                        hi,
                        1e-12,
                    );
                    Ok(area / (std::f64::consts::PI * r * r))
                }
                d => Err(ModelError::Unsupported(format!(
                    "uniform_ball density for dim {d}"
                ))),
            },
        }
    }

    /// Renormalized displacement density `m(x, z)`; zero outside the
    /// admissible set. `None` for the degenerate point-mass family, which has
    /// no Lebesgue density.
    pub fn density(
        &self,
        space: &TraitSpace,
        x: &[f64],
        z: &[f64],
    ) -> Result<Option<f64>, ModelError> {
        if self.is_point_mass() {
            return Ok(None);
        }
        let target: Vec<f64> = x.iter().zip(z).map(|(a, b)| a + b).collect();
        if !space.contains(&target) {
            return Ok(Some(0.0));
        }
        let base = match self {
            DispersalKernel::PointMass => unreachable!(),
            DispersalKernel::TruncatedGaussian { sigma } => {
                let r2: f64 = z.iter().map(|zi| zi * zi).sum();
                let norm = (sigma * (2.0 * std::f64::consts::PI).sqrt()).powi(space.dim() as i32);
                (-r2 / (2.0 * sigma * sigma)).exp() / norm
            }
            DispersalKernel::UniformBall { radius } => {
                let r2: f64 = z.iter().map(|zi| zi * zi).sum();
                if r2 > radius * radius {
                    return Ok(Some(0.0));
                }
                match space.dim() {
                    1 => 1.0 / (2.0 * radius),
                    2 => 1.0 / (std::f64::consts::PI * radius * radius),
                    d => {
                        return Err(ModelError::Unsupported(format!(
                            "uniform_ball density for dim {d}"
                        )))
                    }
                }
            }
        };
        let z_norm = self.normalization(space, x)?;
        Ok(Some(base / z_norm))
    }

    /// Draw a displacement with `x + z` inside the space.
    pub fn sample<R: Rng>(
        &self,
        space: &TraitSpace,
        x: &[f64],
        rng: &mut R,
        max_rejections: u32,
    ) -> Result<Vec<f64>, ModelError> {
        let d = space.dim();
        match self {
            DispersalKernel::PointMass => Ok(vec![0.0; d]),
            DispersalKernel::TruncatedGaussian { sigma } => {
                let normal = Normal::new(0.0, *sigma).expect("positive sigma");
                for _ in 0..max_rejections {
                    let z: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
                    if admissible(space, x, &z) {
                        return Ok(z);
                    }
                }
                Err(self.rejection_error(x, max_rejections))
            }
            DispersalKernel::UniformBall { radius } => {
                let r = *radius;
                for _ in 0..max_rejections {
                    // Uniform in the cube, then in the ball, then restricted.
                    let z: Vec<f64> = (0..d).map(|_| rng.random_range(-r..=r)).collect();
                    let r2: f64 = z.iter().map(|zi| zi * zi).sum();
                    if r2 <= r * r && admissible(space, x, &z) {
                        return Ok(z);
                    }
                }
                Err(self.rejection_error(x, max_rejections))
            }
        }
    }

    fn rejection_error(&self, x: &[f64], attempts: u32) -> ModelError {
        ModelError::Sampling {
            detail: format!(
                "rejection sampling exhausted {attempts} attempts for {:?} at source {x:?}",
                self
            ),
        }
    }
}

fn admissible(space: &TraitSpace, x: &[f64], z: &[f64]) -> bool {
    (0..space.dim()).all(|i| {
        let t = x[i] + z[i];
        let (l, u) = space.side(i);
        t >= l && t <= u
    })
}

fn normal_cdf(t: f64) -> f64 {
    0.5 * (1.0 + erf(t / std::f64::consts::SQRT_2))
}
