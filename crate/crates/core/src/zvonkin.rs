//! One-dimensional replay of the Zvonkin-transform argument.
//!
//! With coefficients frozen along a simulated flow `μ¹_t`, solve
//!
//! ```text
//! u_t + ½ A(t,x) u_xx + B(t,x) u_x = 0,   u(T, x) = x
//! ```
//!
//! on `[-R, R]` by backward Euler in time and central differences in space,
//! then check the pieces the argument relies on: `u_x` stays close to 1 for
//! small `T`, `Y = u(t, X)` is bi-Lipschitz equivalent to `X`, and `Y¹` has no
//! drift.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{BoundMeasure, KernelSpec};
use crate::measure::EmpiricalMeasure;
use crate::numeric::{compensated_sum, solve_tridiagonal, CompensatedSum};
use crate::particle::{sample_initial, simulate_perturbed, Perturbation, SolverConfig, TrajectoryRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeGrid {
    /// Truncated domain `[-R, R]`.
    pub half_width: f64,
    /// Spatial spacing.
    pub h: f64,
    /// Paths must stay in `[-interior_fraction·R, interior_fraction·R]`;
    /// gradient statistics are taken there too.
    pub interior_fraction: f64,
}

impl Default for PdeGrid {
    fn default() -> Self {
        Self { half_width: 8.0, h: 0.05, interior_fraction: 0.5 }
    }
}

impl PdeGrid {
    pub fn nodes(&self) -> Result<Vec<f64>> {
        if !(self.half_width > 0.0 && self.h > 0.0 && self.h < self.half_width) {
            return Err(Error::InvalidParameter(format!(
                "PDE grid needs 0 < h < R, got h={}, R={}",
                self.h, self.half_width
            )));
        }
        if !(self.interior_fraction > 0.0 && self.interior_fraction < 1.0) {
            return Err(Error::InvalidParameter("interior_fraction must lie in (0, 1)".into()));
        }
        let cells = (2.0 * self.half_width / self.h).round() as usize;
        let h = 2.0 * self.half_width / cells as f64;
        Ok((0..=cells).map(|j| -self.half_width + j as f64 * h).collect())
    }

    pub fn interior_half_width(&self) -> f64 {
        self.interior_fraction * self.half_width
    }
}

/// `B` and `A` tables on the `(t_k, x_j)` grid, row-major by time.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenCoefficients {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub drift: Vec<f64>,
    pub diffusion_square: Vec<f64>,
    pub interior_half_width: f64,
}

impl FrozenCoefficients {
    /// Tabulates analytic coefficients `f(t, x) = (B, A)`.
    pub fn from_fn(times: Vec<f64>, grid: &PdeGrid, f: impl Fn(f64, f64) -> (f64, f64)) -> Result<Self> {
        let xs = grid.nodes()?;
        let mut drift = Vec::with_capacity(times.len() * xs.len());
        let mut diffusion_square = Vec::with_capacity(times.len() * xs.len());
        for &t in &times {
            for &x in &xs {
                let (b, a) = f(t, x);
                drift.push(b);
                diffusion_square.push(a);
            }
        }
        Ok(Self { times, xs, drift, diffusion_square, interior_half_width: grid.interior_half_width() })
    }

    pub fn width(&self) -> usize {
        self.xs.len()
    }

    pub fn drift_at(&self, k: usize, j: usize) -> f64 {
        self.drift[k * self.xs.len() + j]
    }

    pub fn a_at(&self, k: usize, j: usize) -> f64 {
        self.diffusion_square[k * self.xs.len() + j]
    }

    pub fn min_diffusion_square(&self) -> f64 {
        self.diffusion_square.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest jump of `A` between consecutive time levels, a proxy for the
    /// time-continuity of `Σ[t, x, μ_t]`.
    pub fn max_time_jump(&self) -> f64 {
        let w = self.xs.len();
        self.diffusion_square
            .chunks_exact(w)
            .collect::<Vec<_>>()
            .windows(2)
            .map(|p| p[0].iter().zip(p[1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }
}

/// Evaluates `B[t_k, x_j, μ_k]` and `A[t_k, x_j, μ_k]` against the step-`k`
/// empirical measure of a recorded run.
pub fn freeze_coefficients(record: &TrajectoryRecord, spec: &KernelSpec, grid: &PdeGrid) -> Result<FrozenCoefficients> {
    if spec.d != 1 || record.d != 1 {
        return Err(Error::UnsupportedDimension(spec.d.max(record.d)));
    }
    if record.paths.is_none() {
        return Err(Error::MissingPaths);
    }
    let xs = grid.nodes()?;
    let w = xs.len();
    let mut drift = vec![0.0; record.times.len() * w];
    let mut diffusion_square = vec![0.0; record.times.len() * w];
    for (k, &t) in record.times.iter().enumerate() {
        let mu = EmpiricalMeasure::uniform(1, record.states_at(k).expect("paths present").to_vec())?;
        let bound = BoundMeasure::new(spec, &mu)?;
        let rows: Vec<(f64, f64)> = xs
            .par_iter()
            .map(|&x| -> Result<(f64, f64)> {
                let b = bound.drift(t, &[x])?[0];
                let sigma = bound.diffusion(t, &[x])?;
                Ok((b, compensated_sum(sigma.iter().map(|s| s * s))))
            })
            .collect::<Result<_>>()?;
        for (j, (b, a)) in rows.into_iter().enumerate() {
            drift[k * w + j] = b;
            diffusion_square[k * w + j] = a;
        }
    }
    Ok(FrozenCoefficients {
        times: record.times.clone(),
        xs,
        drift,
        diffusion_square,
        interior_half_width: grid.interior_half_width(),
    })
}

/// `u(t_k, x_j)`, row-major by time.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub u: Vec<f64>,
    pub h: f64,
    pub half_width: f64,
    pub interior_half_width: f64,
}

impl GridField {
    /// Tabulates an analytic field on the same grid layout the solver uses.
    pub fn from_fn(times: Vec<f64>, grid: &PdeGrid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let xs = grid.nodes()?;
        let u = times.iter().flat_map(|&t| xs.iter().map(move |&x| (t, x))).map(|(t, x)| f(t, x)).collect();
        Ok(Self {
            h: xs[1] - xs[0],
            half_width: grid.half_width,
            interior_half_width: grid.interior_half_width(),
            times,
            xs,
            u,
        })
    }

    pub fn at(&self, k: usize, j: usize) -> f64 {
        self.u[k * self.xs.len() + j]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let w = self.xs.len();
        &self.u[k * w..(k + 1) * w]
    }

    pub fn terminal_time(&self) -> f64 {
        *self.times.last().expect("nonempty time grid")
    }

    /// Indices of nodes with `|x| ≤ interior_half_width`.
    pub fn interior(&self) -> std::ops::Range<usize> {
        let lo = self.xs.partition_point(|x| *x < -self.interior_half_width - 1e-12);
        let hi = self.xs.partition_point(|x| *x <= self.interior_half_width + 1e-12);
        lo..hi
    }

    /// Max `|u − exact|` over interior nodes and all time levels.
    pub fn interior_error(&self, exact: impl Fn(f64, f64) -> f64) -> f64 {
        let range = self.interior();
        let mut worst = 0.0_f64;
        for (k, &t) in self.times.iter().enumerate() {
            for j in range.clone() {
                worst = worst.max((self.at(k, j) - exact(t, self.xs[j])).abs());
            }
        }
        worst
    }

    /// Bilinear interpolation at `(t, x)`.
    pub fn interpolate(&self, t: f64, x: f64) -> f64 {
        let (k0, k1, wt) = bracket(&self.times, t);
        let (j0, j1, wx) = bracket(&self.xs, x);
        let at_row = |k: usize| self.at(k, j0) + wx * (self.at(k, j1) - self.at(k, j0));
        at_row(k0) + wt * (at_row(k1) - at_row(k0))
    }
}

fn bracket(axis: &[f64], v: f64) -> (usize, usize, f64) {
    let last = axis.len() - 1;
    if v <= axis[0] {
        return (0, 0, 0.0);
    }
    if v >= axis[last] {
        return (last, last, 0.0);
    }
    let hi = axis.partition_point(|a| *a <= v).min(last);
    let lo = hi - 1;
    let w = (v - axis[lo]) / (axis[hi] - axis[lo]);
    if w <= 0.0 {
        (lo, lo, 0.0)
    } else {
        (lo, hi, w)
    }
}

/// Backward-Euler / central-difference solution of `u_t + ½A u_xx + B u_x = 0`
/// with `u(T, x) = x` and the transport-corrected Dirichlet data
/// `u(t, ±R) = ±R + ∫_t^T B(s, ±R) ds`. Coefficients are piecewise constant
/// over each time step, taken at the step's left end.
pub fn solve_backward_pde(coeffs: &FrozenCoefficients) -> Result<GridField> {
    let xs = &coeffs.xs;
    let w = xs.len();
    let m = coeffs.times.len();
    if w < 3 || m < 2 {
        return Err(Error::InvalidParameter("PDE grid needs at least 3 nodes and 2 time levels".into()));
    }
    let floor = coeffs.min_diffusion_square();
    if !(floor > 0.0) {
        return Err(Error::InvalidParameter(format!("ellipticity floor {floor} is not positive on the grid")));
    }
    let h = xs[1] - xs[0];
    let mut u = vec![0.0; m * w];
    u[(m - 1) * w..].copy_from_slice(xs);

    let mut left = CompensatedSum::new();
    let mut right = CompensatedSum::new();
    let n = w - 2;
    let (mut lower, mut diag, mut upper, mut rhs) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for k in (0..m - 1).rev() {
        let dt = coeffs.times[k + 1] - coeffs.times[k];
        left.add(coeffs.drift_at(k, 0) * dt);
        right.add(coeffs.drift_at(k, w - 1) * dt);
        let u_left = xs[0] + left.value();
        let u_right = xs[w - 1] + right.value();
        let next = &u[(k + 1) * w..(k + 2) * w];
        for i in 0..n {
            let j = i + 1;
            let a = coeffs.a_at(k, j);
            let b = coeffs.drift_at(k, j);
            let diffusive = dt * a / (2.0 * h * h);
            let advective = dt * b / (2.0 * h);
            lower[i] = -(diffusive - advective);
            upper[i] = -(diffusive + advective);
            diag[i] = 1.0 + 2.0 * diffusive;
            rhs[i] = next[j];
        }
        rhs[0] -= lower[0] * u_left;
        rhs[n - 1] -= upper[n - 1] * u_right;
        let row = solve_tridiagonal(&lower, &diag, &upper, &rhs).ok_or(Error::TridiagonalFailure(k))?;
        let out = &mut u[k * w..(k + 1) * w];
        out[0] = u_left;
        out[w - 1] = u_right;
        out[1..w - 1].copy_from_slice(&row);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::TridiagonalFailure(k));
        }
    }
    Ok(GridField {
        times: coeffs.times.clone(),
        xs: xs.clone(),
        u,
        h,
        half_width: -xs[0],
        interior_half_width: coeffs.interior_half_width,
    })
}

/// Spatial derivative of a [`GridField`] with interior statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientField {
    /// Row-major by time: central differences inside, one-sided at the ends.
    pub values: Vec<f64>,
    /// `sup |∂u/∂x − 1|` over interior nodes and all times.
    pub sup_deviation: f64,
    /// Smallest / largest interior slope, over both central and cell
    /// (forward) differences.
    pub min_slope: f64,
    pub max_slope: f64,
    /// `sup |∂²u/∂x²|` over interior nodes.
    pub sup_second_derivative: f64,
}

impl GradientField {
    /// `max(sup u_x, 1 / inf u_x)`, the sandwich constant implied by the slope range.
    pub fn theoretical_constant(&self) -> Option<f64> {
        (self.min_slope > 0.0).then(|| self.max_slope.max(1.0 / self.min_slope).max(1.0))
    }
}

pub fn gradient_field(field: &GridField) -> GradientField {
    let w = field.xs.len();
    let h = field.h;
    let mut values = vec![0.0; field.u.len()];
    let interior = field.interior();
    let mut sup_deviation = 0.0_f64;
    let mut min_slope = f64::INFINITY;
    let mut max_slope = f64::NEG_INFINITY;
    let mut sup_second = 0.0_f64;
    for k in 0..field.times.len() {
        let row = field.row(k);
        let out = &mut values[k * w..(k + 1) * w];
        out[0] = (row[1] - row[0]) / h;
        out[w - 1] = (row[w - 1] - row[w - 2]) / h;
        for j in 1..w - 1 {
            out[j] = (row[j + 1] - row[j - 1]) / (2.0 * h);
        }
        for j in interior.clone() {
            sup_deviation = sup_deviation.max((out[j] - 1.0).abs());
            min_slope = min_slope.min(out[j]);
            max_slope = max_slope.max(out[j]);
            if j + 1 < w && j + 1 < interior.end {
                let cell = (row[j + 1] - row[j]) / h;
                min_slope = min_slope.min(cell);
                max_slope = max_slope.max(cell);
            }
            if j >= 1 && j + 1 < w {
                sup_second = sup_second.max(((row[j + 1] - 2.0 * row[j] + row[j - 1]) / (h * h)).abs());
            }
        }
    }
    GradientField { values, sup_deviation, min_slope, max_slope, sup_second_derivative: sup_second }
}

/// `Y_t = u(t, X_t)` along one path sampled at `times`.
pub fn transform_path(field: &GridField, times: &[f64], path: &[f64]) -> Result<Vec<f64>> {
    if times.len() != path.len() {
        return Err(Error::LengthMismatch { left: times.len(), right: path.len() });
    }
    let margin = field.interior_half_width;
    path.iter()
        .zip(times)
        .enumerate()
        .map(|(k, (&x, &t))| {
            if !(x.abs() <= margin) {
                Err(Error::DomainExit { step: k })
            } else {
                Ok(field.interpolate(t, x))
            }
        })
        .collect()
}

/// Transformed ensemble paths; particles that leave the interior are
/// discarded and counted.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedEnsemble {
    pub n_particles: usize,
    /// Row-major `[step][particle]`; discarded particles hold NaN.
    pub y: Vec<f64>,
    pub kept: Vec<bool>,
    pub exits: usize,
}

impl TransformedEnsemble {
    pub fn steps(&self) -> usize {
        self.y.len() / self.n_particles - 1
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|k| **k).count()
    }
}

pub fn transform_record(field: &GridField, record: &TrajectoryRecord) -> Result<TransformedEnsemble> {
    if record.d != 1 {
        return Err(Error::UnsupportedDimension(record.d));
    }
    let paths = record.paths.as_ref().ok_or(Error::MissingPaths)?;
    let n = record.n_particles;
    let steps = record.times.len();
    let columns: Vec<Option<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let path: Vec<f64> = (0..steps).map(|k| paths[k * n + j]).collect();
            transform_path(field, &record.times, &path).ok()
        })
        .collect();
    let mut y = vec![f64::NAN; steps * n];
    let mut kept = vec![false; n];
    for (j, col) in columns.into_iter().enumerate() {
        if let Some(col) = col {
            kept[j] = true;
            for (k, v) in col.into_iter().enumerate() {
                y[k * n + j] = v;
            }
        }
    }
    let exits = kept.iter().filter(|k| !**k).count();
    Ok(TransformedEnsemble { n_particles: n, y, kept, exits })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormEquivalence {
    /// Smallest `C ≥ 1` with `C⁻¹|ΔY| ≤ |ΔX| ≤ C|ΔY|` at every step and particle.
    pub measured: f64,
    /// `max(sup u_x, 1/inf u_x)`; `None` when `inf u_x ≤ 0`.
    pub theoretical: Option<f64>,
    pub compared_pairs: usize,
    pub equivalence_failed: bool,
}

/// Measures the sandwich constant between coupled `X` differences and their
/// transforms, and compares it with the gradient-range bound.
pub fn verify_norm_equivalence(
    gradient: &GradientField,
    x1: &TrajectoryRecord,
    x2: &TrajectoryRecord,
    y1: &TransformedEnsemble,
    y2: &TransformedEnsemble,
) -> Result<NormEquivalence> {
    let p1 = x1.paths.as_ref().ok_or(Error::MissingPaths)?;
    let p2 = x2.paths.as_ref().ok_or(Error::MissingPaths)?;
    if p1.len() != p2.len() || y1.y.len() != y2.y.len() || p1.len() != y1.y.len() {
        return Err(Error::LengthMismatch { left: p1.len(), right: y1.y.len() });
    }
    let n = y1.n_particles;
    let mut measured = 1.0_f64;
    let mut compared = 0;
    for (idx, ((a, b), (c, d))) in p1.iter().zip(p2).zip(y1.y.iter().zip(&y2.y)).enumerate() {
        let j = idx % n;
        if !(y1.kept[j] && y2.kept[j]) {
            continue;
        }
        let dx = (a - b).abs();
        let dy = (c - d).abs();
        if dx > 0.0 && dy > 0.0 {
            measured = measured.max(dx / dy).max(dy / dx);
            compared += 1;
        } else if (dx > 0.0) != (dy > 0.0) {
            measured = f64::INFINITY;
        }
    }
    let theoretical = gradient.theoretical_constant();
    Ok(NormEquivalence {
        measured,
        theoretical,
        compared_pairs: compared,
        equivalence_failed: theoretical.is_none() || !measured.is_finite(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    /// `mean_j ΔY_{j,k}` per step.
    pub mean_increments: Vec<f64>,
    /// `|mean_j ΔY_{j,k}| / √(dt/N)` per step.
    pub standardized: Vec<f64>,
    pub max_standardized: f64,
    pub particles: usize,
}

/// Standardized drift residual of a transformed ensemble. A martingale gives
/// O(1) values; an uncancelled drift `b₀` gives about `b₀ √(N dt)`.
pub fn martingale_residual(paths: &TransformedEnsemble, dt: f64) -> ResidualStats {
    let n = paths.n_particles;
    let kept: Vec<usize> = (0..n).filter(|&j| paths.kept[j]).collect();
    let count = kept.len();
    let scale = (dt / count.max(1) as f64).sqrt();
    let mut mean_increments = Vec::with_capacity(paths.steps());
    for k in 0..paths.steps() {
        let inc = compensated_sum(kept.iter().map(|&j| paths.y[(k + 1) * n + j] - paths.y[k * n + j]));
        mean_increments.push(inc / count.max(1) as f64);
    }
    let standardized: Vec<f64> = mean_increments.iter().map(|m| m.abs() / scale).collect();
    let max_standardized = standardized.iter().copied().fold(0.0, f64::max);
    ResidualStats { mean_increments, standardized, max_standardized, particles: count }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSummary {
    pub sup_deviation: f64,
    pub min_slope: f64,
    pub max_slope: f64,
    pub sup_second_derivative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleSummary {
    pub max_standardized: f64,
    pub particles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZvonkinReport {
    pub kernel: String,
    pub horizon: f64,
    pub grid: PdeGrid,
    /// Smallest `A` over the frozen tables.
    pub ellipticity_floor: f64,
    /// Largest jump of `A` between consecutive time levels.
    pub time_continuity: f64,
    /// Max change of interior `u` when `R` is doubled.
    pub r_doubling_change: f64,
    pub gradient: GradientSummary,
    pub norm_equivalence: NormEquivalence,
    pub martingale: MartingaleSummary,
    pub exits_first: usize,
    pub exits_second: usize,
    /// Fraction of first-solution paths that stayed inside the interior.
    pub stay_fraction: f64,
}

/// Everything produced by [`run_zvonkin`].
#[derive(Debug, Clone)]
pub struct ZvonkinRun {
    pub report: ZvonkinReport,
    pub field: GridField,
    pub gradient: GradientField,
}

/// The full pipeline: coupled pair, frozen flow of the first solution,
/// backward solve, gradient, transforms, sandwich constant and residual.
pub fn run_zvonkin(spec: &KernelSpec, config: &SolverConfig, perturbation: &Perturbation, grid: &PdeGrid) -> Result<ZvonkinRun> {
    if spec.d != 1 {
        return Err(Error::UnsupportedDimension(spec.d));
    }
    let config = config.clone().with_paths();
    let initial = sample_initial(&config, 1)?;
    let (first, second, _) = simulate_perturbed(spec, &config, initial, perturbation)?;
    let frozen = freeze_coefficients(&first, spec, grid)?;
    let field = solve_backward_pde(&frozen)?;
    let gradient = gradient_field(&field);

    let wide = PdeGrid { half_width: 2.0 * grid.half_width, interior_fraction: grid.interior_fraction / 2.0, ..grid.clone() };
    let wide_field = solve_backward_pde(&freeze_coefficients(&first, spec, &wide)?)?;
    let mut r_doubling_change = 0.0_f64;
    for (k, &t) in field.times.iter().enumerate() {
        for j in field.interior() {
            r_doubling_change = r_doubling_change.max((field.at(k, j) - wide_field.interpolate(t, field.xs[j])).abs());
        }
    }

    let y1 = transform_record(&field, &first)?;
    let y2 = transform_record(&field, &second)?;
    let norm_equivalence = verify_norm_equivalence(&gradient, &first, &second, &y1, &y2)?;
    let residual = martingale_residual(&y1, config.dt);
    let report = ZvonkinReport {
        kernel: spec.name.clone(),
        horizon: config.horizon,
        grid: grid.clone(),
        ellipticity_floor: frozen.min_diffusion_square(),
        time_continuity: frozen.max_time_jump(),
        r_doubling_change,
        gradient: GradientSummary {
            sup_deviation: gradient.sup_deviation,
            min_slope: gradient.min_slope,
            max_slope: gradient.max_slope,
            sup_second_derivative: gradient.sup_second_derivative,
        },
        norm_equivalence,
        martingale: MartingaleSummary { max_standardized: residual.max_standardized, particles: residual.particles },
        exits_first: y1.exits,
        exits_second: y2.exits,
        stay_fraction: y1.kept_count() as f64 / y1.n_particles as f64,
    };
    Ok(ZvonkinRun { report, field, gradient })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn times(t_end: f64, steps: usize) -> Vec<f64> {
        (0..=steps).map(|k| t_end * k as f64 / steps as f64).collect()
    }

    fn grid(r: f64, h: f64) -> PdeGrid {
        PdeGrid { half_width: r, h, interior_fraction: 0.5 }
    }

    #[test]
    fn zero_drift_keeps_identity() {
        let c = FrozenCoefficients::from_fn(times(1.0, 50), &grid(4.0, 0.1), |_, _| (0.0, 1.0)).unwrap();
        let u = solve_backward_pde(&c).unwrap();
        assert!(u.interior_error(|_, x| x) <= 1e-10);
    }

    #[test]
    fn constant_drift_shifts_by_remaining_time() {
        let b0 = 0.7;
        let c = FrozenCoefficients::from_fn(times(1.0, 40), &grid(4.0, 0.1), |_, _| (b0, 1.0)).unwrap();
        let u = solve_backward_pde(&c).unwrap();
        assert!(u.interior_error(|t, x| x + b0 * (1.0 - t)) <= 1e-8);
    }

    #[test]
    fn linear_drift_scales_by_exponential() {
        let c = FrozenCoefficients::from_fn(times(0.5, 500), &grid(10.0, 0.1), |_, x| (-x, 1.0)).unwrap();
        let u = solve_backward_pde(&c).unwrap();
        let err = u.interior_error(|t, x| x * (-(0.5 - t)).exp());
        // first order in dt: |x| ≤ 5, dt = 1e-3
        assert!(err < 5.0 * 1e-3, "{err}");
    }

    #[test]
    fn rejects_degenerate_coefficients() {
        let c = FrozenCoefficients::from_fn(times(1.0, 4), &grid(4.0, 0.5), |_, _| (0.0, 0.0)).unwrap();
        assert!(solve_backward_pde(&c).is_err());
    }

    #[test]
    fn gradient_examples() {
        let g = grid(4.0, 0.1);
        let f = GridField::from_fn(times(1.0, 10), &g, |_, x| x).unwrap();
        assert!(gradient_field(&f).sup_deviation < 1e-12);
        let f = GridField::from_fn(times(1.0, 10), &g, |t, x| x + 0.3 * (1.0 - t)).unwrap();
        assert!(gradient_field(&f).sup_deviation < 1e-12);
        let t_end = 0.5;
        let f = GridField::from_fn(times(t_end, 10), &g, |t, x| x * (-(t_end - t)).exp()).unwrap();
        let dev = gradient_field(&f).sup_deviation;
        assert!((dev - (1.0 - (-t_end).exp())).abs() < 1e-12, "{dev}");
    }

    #[test]
    fn transform_examples() {
        let g = grid(4.0, 0.1);
        let ts = times(1.0, 10);
        let path: Vec<f64> = ts.iter().map(|t| (3.0 * t).sin()).collect();
        let id = GridField::from_fn(ts.clone(), &g, |_, x| x).unwrap();
        let y = transform_path(&id, &ts, &path).unwrap();
        for (a, b) in y.iter().zip(&path) {
            assert!((a - b).abs() < 1e-12);
        }
        let shift = GridField::from_fn(ts.clone(), &g, |t, x| x + 0.4 * (1.0 - t)).unwrap();
        let y = transform_path(&shift, &ts, &path).unwrap();
        for ((a, b), t) in y.iter().zip(&path).zip(&ts) {
            assert!((a - b - 0.4 * (1.0 - t)).abs() < 1e-12);
        }
        let exp = GridField::from_fn(ts.clone(), &g, |t, x| x * (-(1.0 - t)).exp()).unwrap();
        assert!(transform_path(&exp, &ts, &vec![0.0; ts.len()]).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn transform_reports_domain_exit() {
        let g = grid(4.0, 0.1);
        let ts = times(1.0, 3);
        let id = GridField::from_fn(ts.clone(), &g, |_, x| x).unwrap();
        let err = transform_path(&id, &ts, &[0.0, 1.0, 2.5, 0.0]).unwrap_err();
        assert!(matches!(err, Error::DomainExit { step: 2 }));
    }

    #[test]
    fn frozen_tables_examples() {
        use crate::kernels::builtin_kernel;
        use crate::particle::{simulate, InitialLaw};
        let cfg = SolverConfig::new(400, 0.01, 0.2, 1, InitialLaw::delta(0.5)).with_paths();
        let g = grid(4.0, 0.25);
        let zero = builtin_kernel("zero_drift_unit_diffusion", &[]).unwrap();
        let c = freeze_coefficients(&simulate(&zero, &cfg).unwrap(), &zero, &g).unwrap();
        assert!(c.diffusion_square.iter().all(|a| *a == 1.0));
        assert!(c.drift.iter().all(|b| *b == 0.0));

        let ou = builtin_kernel("mean_field_ou", &[]).unwrap();
        let c = freeze_coefficients(&simulate(&ou, &cfg).unwrap(), &ou, &g).unwrap();
        let tol = 3.0 / (400.0_f64).sqrt();
        for k in 0..c.times.len() {
            for (j, x) in c.xs.iter().enumerate() {
                assert!((c.drift_at(k, j) + (x - 0.5)).abs() <= tol);
            }
        }

        let mut no_paths = cfg.clone();
        no_paths.record_paths = false;
        let rec = simulate(&ou, &no_paths).unwrap();
        assert!(matches!(freeze_coefficients(&rec, &ou, &g), Err(Error::MissingPaths)));
    }

    #[test]
    fn norm_equivalence_examples() {
        use crate::kernels::builtin_kernel;
        use crate::particle::{simulate_perturbed, InitialLaw};
        let k = builtin_kernel("zero_drift_unit_diffusion", &[]).unwrap();
        let cfg = SolverConfig::new(50, 0.01, 0.5, 2, InitialLaw::normal(0.0, 0.3)).with_paths();
        let init = crate::particle::sample_initial(&cfg, 1).unwrap();
        let (a, b, _) = simulate_perturbed(&k, &cfg, init, &Perturbation::InitialShift { delta: 0.05 }).unwrap();
        let g = grid(8.0, 0.05);
        let check = |f: &dyn Fn(f64, f64) -> f64| {
            let field = GridField::from_fn(a.times.clone(), &g, f).unwrap();
            let grad = gradient_field(&field);
            let ya = transform_record(&field, &a).unwrap();
            let yb = transform_record(&field, &b).unwrap();
            verify_norm_equivalence(&grad, &a, &b, &ya, &yb).unwrap()
        };
        assert!((check(&|_, x| x).measured - 1.0).abs() < 1e-9);
        assert!((check(&|t, x| x + 0.3 * (0.5 - t)).measured - 1.0).abs() < 1e-9);
        let e = check(&|t, x| x * (-(0.5 - t)).exp());
        assert!(e.measured <= 0.5_f64.exp() + 1e-9, "{}", e.measured);
        assert!(e.measured <= e.theoretical.unwrap() * (1.0 + 1e-9));
    }

    #[test]
    fn transport_bound_holds() {
        let t_end = 0.5;
        let c = FrozenCoefficients::from_fn(times(t_end, 50), &grid(8.0, 0.05), |t, x| ((3.0 * x + t).sin(), 1.0 + 0.5 * x.cos()))
            .unwrap();
        let u = solve_backward_pde(&c).unwrap();
        for (k, &t) in u.times.iter().enumerate() {
            for j in u.interior() {
                assert!((u.at(k, j) - u.xs[j]).abs() <= (t_end - t) + 1e-12);
            }
        }
    }

    #[test]
    fn residual_detects_constant_drift() {
        let n = 100;
        let steps = 10;
        let mut y = vec![0.0; (steps + 1) * n];
        for k in 0..=steps {
            for j in 0..n {
                y[k * n + j] = 0.5 * k as f64 * 0.01;
            }
        }
        let ens = TransformedEnsemble { n_particles: n, y, kept: vec![true; n], exits: 0 };
        let r = martingale_residual(&ens, 0.01);
        // drift 0.5: 0.5·√(N dt) = 0.5
        assert!((r.max_standardized - 0.5).abs() < 1e-9, "{}", r.max_standardized);
    }
}
