use serde::{Deserialize, Serialize};

use super::ModelError;

/// Compact box trait space, the product of per-coordinate closed intervals.
///
/// All rate fields, kernels and populations live on this box. Points are
/// plain `&[f64]` slices of length `dim()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TraitSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, ModelError> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(ModelError::BadSpace(format!(
                "dimension mismatch: lower has {} coordinates, upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() || l >= u {
                return Err(ModelError::BadSpace(format!(
                    "coordinate {i}: need finite lower < upper, got [{l}, {u}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Unit interval, the usual one-dimensional setting.
    pub fn unit_interval() -> Self {
        Self::new(vec![0.0], vec![1.0]).expect("unit interval is valid")
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn side(&self, axis: usize) -> (f64, f64) {
        (self.lower[axis], self.upper[axis])
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .product()
    }

    /// Membership in the closed box. NaN coordinates are outside.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&xi, (&l, &u))| xi >= l && xi <= u)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    /// All 2^d corner points of the box.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..1usize << d)
            .map(|mask| {
                (0..d)
                    .map(|i| {
                        if mask >> i & 1 == 0 {
                            self.lower[i]
                        } else {
                            self.upper[i]
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Regular lattice with `per_dim` nodes per axis, endpoints included.
    ///
    /// Iteration order is row-major with the last axis fastest.
    pub fn lattice(&self, per_dim: usize) -> Lattice<'_> {
        assert!(per_dim >= 2, "lattice needs at least 2 nodes per axis");
        Lattice {
            space: self,
            per_dim,
            index: 0,
            total: per_dim.pow(self.dim() as u32),
        }
    }
}

pub struct Lattice<'a> {
    space: &'a TraitSpace,
    per_dim: usize,
    index: usize,
    total: usize,
}

impl Iterator for Lattice<'_> {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        if self.index >= self.total {
            return None;
        }
        let d = self.space.dim();
        let mut rem = self.index;
        let mut point = vec![0.0; d];
        for axis in (0..d).rev() {
            let k = rem % self.per_dim;
            rem /= self.per_dim;
            let (l, u) = self.space.side(axis);
            point[axis] = l + (u - l) * k as f64 / (self.per_dim - 1) as f64;
        }
        self.index += 1;
        Some(point)
    }
}
