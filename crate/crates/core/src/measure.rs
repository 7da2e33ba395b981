//! Empirical measures: finite weighted point clouds in R^d.

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, distance, CompensatedSum};

const WEIGHT_TOLERANCE: f64 = 1e-12;

/// Weighted point cloud standing in for a marginal law μ_t.
///
/// Points are stored row-major (`len × dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be at least 1".into()));
        }
        if points.is_empty() || weights.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        if points.len() != weights.len() * dim {
            return Err(Error::InvalidMeasure(format!(
                "{} coordinates for {} weights in dimension {dim}",
                points.len(),
                weights.len()
            )));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidMeasure(format!("non-finite coordinate {p}")));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidMeasure("weights must be finite and nonnegative".into()));
        }
        let total = compensated_sum(weights.iter().copied());
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { dim, points, weights })
    }

    /// Uniform weights `1/n` on the given points.
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        let n = points.len() / dim;
        Self::new(dim, points, vec![1.0 / n as f64; n])
    }

    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::uniform(1, values.to_vec())
    }

    pub fn dirac(point: &[f64]) -> Result<Self> {
        Self::new(point.len(), point.to_vec(), vec![1.0])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points.chunks_exact(self.dim).zip(self.weights.iter().copied())
    }

    /// Weighted mean, accumulated in ascending index order.
    pub fn mean(&self) -> Vec<f64> {
        let mut acc = vec![CompensatedSum::new(); self.dim];
        for (p, w) in self.iter() {
            for (a, x) in acc.iter_mut().zip(p) {
                a.add(w * x);
            }
        }
        acc.iter().map(CompensatedSum::value).collect()
    }

    /// The mixture `λ·self + (1−λ)·other` as a single point cloud.
    pub fn mixture(&self, lambda: f64, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(format!("{} vs {}", self.dim, other.dim)));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidParameter(format!("mixture weight {lambda} outside [0,1]")));
        }
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let mut weights: Vec<f64> = self.weights.iter().map(|w| lambda * w).collect();
        weights.extend(other.weights.iter().map(|w| (1.0 - lambda) * w));
        Self::new(self.dim, points, weights)
    }
}

/// `Σ_j w_j |y_j|²`.
pub fn second_moment(mu: &EmpiricalMeasure) -> f64 {
    compensated_sum(mu.iter().map(|(p, w)| w * p.iter().map(|x| x * x).sum::<f64>()))
}

/// `mean_j |x_j − y_j|` for two equally sized samples viewed as a coupling.
pub fn mean_coupling_distance(xs: &[f64], ys: &[f64], dim: usize) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch { left: xs.len() / dim.max(1), right: ys.len() / dim.max(1) });
    }
    if dim == 0 || xs.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let n = xs.len() / dim;
    let total = compensated_sum(
        xs.chunks_exact(dim).zip(ys.chunks_exact(dim)).map(|(a, b)| distance(a, b)),
    );
    Ok(total / n as f64)
}

/// Sorted atoms with cumulative weights, merging duplicates.
fn quantile_atoms(mu: &EmpiricalMeasure) -> Vec<(f64, f64)> {
    let mut atoms: Vec<(f64, f64)> = mu.points.iter().copied().zip(mu.weights.iter().copied()).collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    atoms
}

/// W₁ distance between two one-dimensional empirical measures,
/// `∫₀¹ |F⁻¹(u) − G⁻¹(u)| du`, splitting atoms at joint jump points.
pub fn wasserstein1_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.dim != 1 {
        return Err(Error::UnsupportedDimension(mu.dim));
    }
    if nu.dim != 1 {
        return Err(Error::UnsupportedDimension(nu.dim));
    }
    let a = quantile_atoms(mu);
    let b = quantile_atoms(nu);
    let (mut i, mut j) = (0, 0);
    let (mut rem_a, mut rem_b) = (a[0].1, b[0].1);
    let mut acc = CompensatedSum::new();
    loop {
        let mass = rem_a.min(rem_b);
        acc.add(mass * (a[i].0 - b[j].0).abs());
        rem_a -= mass;
        rem_b -= mass;
        // Advance whichever quantile function jumps; tiny remainders are rounding.
        if rem_a <= WEIGHT_TOLERANCE * 0.5 {
            i += 1;
            if i == a.len() {
                break;
            }
            rem_a += a[i].1;
        }
        if rem_b <= WEIGHT_TOLERANCE * 0.5 {
            j += 1;
            if j == b.len() {
                break;
            }
            rem_b += b[j].1;
        }
    }
    Ok(acc.value())
}
