use serde::{Deserialize, Serialize};

use super::space::TraitSpace;

/// Smooth scalar function on the trait space.
///
/// The closed set of families keeps positivity and supremum bounds
/// certifiable, which is what the rate assumptions ask for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ScalarField {
    /// Constant value everywhere.
    Constant { value: f64 },
    /// `slope . x + intercept`.
    Affine { slope: Vec<f64>, intercept: f64 },
    /// `floor + height * exp(-|x - center|^2 / (2 width^2))`.
    GaussianBump {
        center: Vec<f64>,
        width: f64,
        height: f64,
        floor: f64,
    },
    /// Multilinear interpolation of `values` on a regular node lattice over
    /// the space; `shape` gives nodes per axis, values are row-major with the
    /// last axis fastest.
    GridInterpolant { shape: Vec<usize>, values: Vec<f64> },
}

impl ScalarField {
    pub fn constant(value: f64) -> Self {
        ScalarField::Constant { value }
    }

    pub fn eval(&self, space: &TraitSpace, x: &[f64]) -> f64 {
        match self {
            ScalarField::Constant { value } => *value,
            ScalarField::Affine { slope, intercept } => {
                intercept + slope.iter().zip(x).map(|(a, xi)| a * xi).sum::<f64>()
            }
            ScalarField::GaussianBump {
                center,
                width,
                height,
                floor,
            } => {
                let r2: f64 = center.iter().zip(x).map(|(c, xi)| (xi - c).powi(2)).sum();
                floor + height * (-r2 / (2.0 * width * width)).exp()
            }
            ScalarField::GridInterpolant { shape, values } => {
                interpolate(space, shape, values, x)
            }
        }
    }

    /// Certified supremum over the whole box, not just a lattice.
    ///
    /// Constant and affine peak at a corner, the bump at its center (plus
    /// floor), and multilinear interpolation never exceeds its node values.
    pub fn sup_bound(&self, space: &TraitSpace) -> f64 {
        match self {
            ScalarField::Constant { value } => *value,
            ScalarField::Affine { .. } => space
                .corners()
                .iter()
                .map(|c| self.eval(space, c))
                .fold(f64::NEG_INFINITY, f64::max),
            ScalarField::GaussianBump { height, floor, .. } => floor + height.max(0.0),
            ScalarField::GridInterpolant { values, .. } => {
                values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    /// Structural sanity: parameter shapes consistent with the space.
    pub fn check_shape(&self, space: &TraitSpace) -> Result<(), String> {
        let d = space.dim();
        match self {
            ScalarField::Constant { value } => {
                if !value.is_finite() {
                    return Err("constant value must be finite".into());
                }
            }
            ScalarField::Affine { slope, .. } => {
                if slope.len() != d {
                    return Err(format!("affine slope has {} entries, space dim is {d}", slope.len()));
                }
            }
            ScalarField::GaussianBump { center, width, .. } => {
                if center.len() != d {
                    return Err(format!("bump center has {} entries, space dim is {d}", center.len()));
                }
                if *width <= 0.0 {
                    return Err("bump width must be positive".into());
                }
            }
            ScalarField::GridInterpolant { shape, values } => {
                if shape.len() != d {
                    return Err(format!("grid shape has {} axes, space dim is {d}", shape.len()));
                }
                if shape.iter().any(|&s| s < 2) {
                    return Err("grid interpolant needs at least 2 nodes per axis".into());
                }
                let expect: usize = shape.iter().product();
                if values.len() != expect {
                    return Err(format!("grid has {} values, shape wants {expect}", values.len()));
                }
            }
        }
        Ok(())
    }
}

fn interpolate(space: &TraitSpace, shape: &[usize], values: &[f64], x: &[f64]) -> f64 {
    let d = space.dim();
    // Per axis: enclosing cell index and fractional offset.
    let mut cell = vec![0usize; d];
    let mut frac = vec![0.0f64; d];
    for axis in 0..d {
        let (l, u) = space.side(axis);
        let nodes = shape[axis];
        let t = ((x[axis] - l) / (u - l)) * (nodes - 1) as f64;
        let t = t.clamp(0.0, (nodes - 1) as f64);
        let i = (t.floor() as usize).min(nodes - 2);
        cell[axis] = i;
        frac[axis] = t - i as f64;
    }
    // Row-major strides, last axis fastest.
    let mut strides = vec![1usize; d];
    for axis in (0..d.saturating_sub(1)).rev() {
        strides[axis] = strides[axis + 1] * shape[axis + 1];
    }
    let mut acc = 0.0;
    for corner in 0..1usize << d {
        let mut idx = 0usize;
        let mut w = 1.0;
        for axis in 0..d {
            let hi = corner >> axis & 1 == 1;
            idx += (cell[axis] + hi as usize) * strides[axis];
            w *= if hi { frac[axis] } else { 1.0 - frac[axis] };
        }
        acc += w * values[idx];
    }
    acc
}
