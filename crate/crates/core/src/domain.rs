//! Observation windows and the point sets used to integrate over them.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[lower, upper]` in `D` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Deserialize)]
struct RawBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawBox> for BoxDomain {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        BoxDomain::new(raw.lower, raw.upper)
    }
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::invalid("domain needs at least one dimension"));
        }
        if lower.len() != upper.len() {
            return Err(Error::invalid(format!(
                "lower has {} dims but upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        for (d, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!(
                    "dimension {d}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        let domain = BoxDomain { lower, upper };
        let v = domain.volume();
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(format!("volume {v} is not positive and finite")));
        }
        Ok(domain)
    }

    /// One-dimensional interval `[lower, upper]`.
    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower], vec![upper])
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

    pub fn side(&self, d: usize) -> f64 {
        self.upper[d] - self.lower[d]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|d| self.side(d)).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// `count` i.i.d. uniform points with equal weights summing to the volume.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<IntegrationSet> {
        if count == 0 {
            return Err(Error::invalid("sample_uniform needs count >= 1"));
        }
        let dim = self.dim();
        let mut points = DMatrix::zeros(count, dim);
        for i in 0..count {
            for d in 0..dim {
                points[(i, d)] = self.lower[d] + self.side(d) * rng.random::<f64>();
            }
        }
        Ok(IntegrationSet {
            weight: self.volume() / count as f64,
            points,
        })
    }

    /// Midpoint lattice with `per_dim` cells along every axis.
    pub fn grid(&self, per_dim: usize) -> Result<IntegrationSet> {
        if per_dim == 0 {
            return Err(Error::invalid("grid needs per_dim >= 1"));
        }
        let dim = self.dim();
        let total = u32::try_from(dim)
            .ok()
            .and_then(|d| per_dim.checked_pow(d))
            .filter(|n| *n <= 100_000_000)
            .ok_or_else(|| Error::invalid(format!("grid of {per_dim}^{dim} points is too large")))?;
        let mut points = DMatrix::zeros(total, dim);
        for i in 0..total {
            // Mixed-radix index, first dimension varies slowest.
            let mut rest = i;
            for d in (0..dim).rev() {
                let k = rest % per_dim;
                rest /= per_dim;
                points[(i, d)] = self.lower[d] + self.side(d) * (k as f64 + 0.5) / per_dim as f64;
            }
        }
        Ok(IntegrationSet {
            weight: self.volume() / total as f64,
            points,
        })
    }
}

/// Equal-weight point set over a domain; `weight * len() == volume`.
#[derive(Debug, Clone)]
pub struct IntegrationSet {
    pub points: DMatrix<f64>,
    pub weight: f64,
}

impl IntegrationSet {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }

    /// Weighted sum of `f` over the points.
    pub fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> f64 {
        let mut buf = vec![0.0; self.points.ncols()];
        let mut acc = 0.0;
        for i in 0..self.len() {
            for (d, b) in buf.iter_mut().enumerate() {
                *b = self.points[(i, d)];
            }
            acc += f(&buf);
        }
        acc * self.weight
    }
}
