//! Interaction kernels `b(t,x,y)`, `σ(t,x,y)` and the measure functionals
//!
//! ```text
//! B[t,x,μ] = ∫ b(t,x,y) μ(dy),   Σ[t,x,μ] = ∫ σ(t,x,y) μ(dy),   A = ΣΣᵀ
//! ```
//!
//! evaluated against empirical measures. General kernels are summed over all
//! atoms in ascending index order with compensated summation. Kernels that
//! declare themselves independent of `y`, or affine in `y`, are evaluated once
//! (at any atom, respectively at the measure's mean), which is the same
//! integral computed in O(1) instead of O(N).

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::numeric::{gram, CompensatedSum};

/// `(t, x, y, out)`; writes `d` drift entries or `d × d1` row-major diffusion entries.
pub type KernelFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;

pub const REGISTRY: [&str; 6] = [
    "zero_drift_unit_diffusion",
    "mean_field_ou",
    "bounded_tanh_attraction",
    "dini_power_drift",
    "log_modulus_drift",
    "degenerate_diffusion",
];

/// How a kernel depends on the integration variable `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YDependence {
    None,
    Affine,
    General,
}

/// Modulus of continuity of the drift in `x`, as declared by the kernel author.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModulusFamily {
    /// `slope · r`
    Linear { slope: f64 },
    /// `min(r^alpha, 1)`
    Power { alpha: f64 },
    /// `(1 + ln(1/r))^(-beta)` near zero, see [`log_modulus_profile`]
    LogPower { beta: f64 },
    /// `size` for every `r > 0` (a jump discontinuity)
    Jump { size: f64 },
    /// Piecewise-linear in `log r` through the given points.
    Table { radii: Vec<f64>, values: Vec<f64> },
}

impl ModulusFamily {
    pub fn eval(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        match self {
            ModulusFamily::Linear { slope } => slope * r,
            ModulusFamily::Power { alpha } => r.powf(*alpha).min(1.0),
            ModulusFamily::LogPower { beta } => log_modulus_profile(r, *beta),
            ModulusFamily::Jump { size } => *size,
            ModulusFamily::Table { radii, values } => {
                if radii.is_empty() {
                    return 0.0;
                }
                if r <= radii[0] {
                    return values[0];
                }
                if r >= radii[radii.len() - 1] {
                    return values[values.len() - 1];
                }
                let k = radii.partition_point(|&q| q <= r) - 1;
                let s = (r.ln() - radii[k].ln()) / (radii[k + 1].ln() - radii[k].ln());
                values[k] + s * (values[k + 1] - values[k])
            }
        }
    }
}

/// `(1 + ln(1/r))^(-β)` on `(0,1)`, 1 on `[1,∞)`, 0 at 0.
pub fn log_modulus(r: f64, beta: f64) -> f64 {
    if r <= 0.0 {
        0.0
    } else if r >= 1.0 {
        1.0
    } else {
        (1.0 + (1.0 / r).ln()).powf(-beta)
    }
}

/// Concave modulus equal to `(1 + ln(1/r))^(-β)` for `r ≤ e^{-β}` (where that
/// function is concave), continued by its tangent line and capped at 1.
/// Concavity makes it its own modulus of continuity.
pub fn log_modulus_profile(r: f64, beta: f64) -> f64 {
    let knee = (-beta).exp();
    if r <= knee {
        return log_modulus(r, beta);
    }
    let value = log_modulus(knee, beta);
    let slope = beta * (1.0 + beta).powf(-beta - 1.0) / knee;
    (value + slope * (r - knee)).min(1.0)
}

/// Regularity metadata a kernel author asserts. Trusted by the hypothesis
/// checker and spot-checked by sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeclaredRegularity {
    /// Sup of the Euclidean norm of `b`.
    pub drift_bound: f64,
    /// Sup of the Frobenius norm of `σ`.
    pub diffusion_bound: f64,
    /// Lipschitz constant in `y`, covering both `b` and `σ`.
    pub lipschitz_y: f64,
    /// Lipschitz constant of `σ` in `x`.
    pub lipschitz_x_sigma: f64,
    pub drift_modulus: ModulusFamily,
}

#[derive(Clone)]
pub struct KernelSpec {
    pub name: String,
    pub params: Vec<f64>,
    pub d: usize,
    pub d1: usize,
    drift: KernelFn,
    diffusion: KernelFn,
    pub drift_y: YDependence,
    pub diffusion_y: YDependence,
    pub declared: DeclaredRegularity,
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSpec")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("d", &self.d)
            .field("d1", &self.d1)
            .field("drift_y", &self.drift_y)
            .field("diffusion_y", &self.diffusion_y)
            .field("declared", &self.declared)
            .finish()
    }
}

/// Drift, diffusion and `A = ΣΣᵀ` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientValue {
    pub drift: Vec<f64>,
    /// Row-major `d × d1`.
    pub diffusion: Vec<f64>,
    /// Row-major `d × d`, symmetric.
    pub diffusion_square: Vec<f64>,
}

impl KernelSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn custom(
        name: impl Into<String>,
        d: usize,
        d1: usize,
        drift: KernelFn,
        drift_y: YDependence,
        diffusion: KernelFn,
        diffusion_y: YDependence,
        declared: DeclaredRegularity,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::DimensionMismatch("state dimension d must be at least 1".into()));
        }
        if d1 < d {
            return Err(Error::DimensionMismatch(format!("noise dimension d1={d1} is smaller than d={d}")));
        }
        Ok(Self {
            name: name.into(),
            params: Vec::new(),
            d,
            d1,
            drift,
            diffusion,
            drift_y,
            diffusion_y,
            declared,
        })
    }

    pub fn eval_drift(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, y, out)
    }

    pub fn eval_diffusion(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, y, out)
    }

    /// Same kernel with the drift replaced by its Gaussian smoothing in `x`,
    /// `b_h(t,x,y) = E b(t, x + hZ, y)`, computed by a tensor Gaussian rule.
    pub fn mollified(&self, width: f64) -> Result<Self> {
        if !(width >= 0.0 && width.is_finite()) {
            return Err(Error::InvalidParameter(format!("mollification width {width}")));
        }
        if width == 0.0 {
            return Ok(self.clone());
        }
        if self.d > 3 {
            return Err(Error::InvalidParameter(format!(
                "drift mollification supports d <= 3, got {}",
                self.d
            )));
        }
        let nodes = gaussian_nodes(if self.d == 1 { MOLLIFIER_NODES_1D } else { MOLLIFIER_NODES }, width);
        let inner = self.drift.clone();
        let d = self.d;
        let drift: KernelFn = Arc::new(move |t, x, y, out| {
            let mut acc = vec![CompensatedSum::new(); d];
            let mut shifted = x.to_vec();
            let mut value = vec![0.0; d];
            let total = nodes.len().pow(d as u32);
            for flat in 0..total {
                let mut idx = flat;
                let mut weight = 1.0;
                for k in 0..d {
                    let (node, w) = nodes[idx % nodes.len()];
                    idx /= nodes.len();
                    shifted[k] = x[k] + node;
                    weight *= w;
                }
                inner(t, &shifted, y, &mut value);
                for (a, v) in acc.iter_mut().zip(&value) {
                    a.add(weight * v);
                }
            }
            for (o, a) in out.iter_mut().zip(&acc) {
                *o = a.value();
            }
        });
        let mut spec = self.clone();
        spec.name = format!("{}~mollified({width})", self.name);
        spec.drift = drift;
        Ok(spec)
    }
}

const MOLLIFIER_NODES_1D: usize = 241;
const MOLLIFIER_NODES: usize = 31;
const MOLLIFIER_CUTOFF: f64 = 6.0;

/// Equispaced rule for `E f(width·Z)`, `Z ~ N(0,1)`, on `[-6, 6]` with
/// normalized Gaussian weights. Spectrally accurate for smooth `f` and first
/// order across jumps.
fn gaussian_nodes(count: usize, width: f64) -> Vec<(f64, f64)> {
    let spacing = 2.0 * MOLLIFIER_CUTOFF / (count - 1) as f64;
    let raw: Vec<(f64, f64)> = (0..count)
        .map(|i| {
            let z = -MOLLIFIER_CUTOFF + i as f64 * spacing;
            (z, (-0.5 * z * z).exp())
        })
        .collect();
    let total: f64 = raw.iter().map(|p| p.1).sum();
    raw.into_iter().map(|(z, w)| (width * z, w / total)).collect()
}

/// A kernel paired with one measure, caching what the measure functionals
/// need (the mean, for affine kernels).
pub struct BoundMeasure<'a> {
    spec: &'a KernelSpec,
    mu: &'a EmpiricalMeasure,
    mean: Option<Vec<f64>>,
}

impl<'a> BoundMeasure<'a> {
    pub fn new(spec: &'a KernelSpec, mu: &'a EmpiricalMeasure) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        if mu.dim() != spec.d {
            return Err(Error::DimensionMismatch(format!(
                "measure lives in R^{} but kernel has d={}",
                mu.dim(),
                spec.d
            )));
        }
        let needs_mean = spec.drift_y == YDependence::Affine || spec.diffusion_y == YDependence::Affine;
        Ok(Self {
            spec,
            mu,
            mean: needs_mean.then(|| mu.mean()),
        })
    }

    pub fn measure(&self) -> &EmpiricalMeasure {
        self.mu
    }

    fn integrate(
        &self,
        kernel: &KernelFn,
        form: YDependence,
        t: f64,
        x: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        match form {
            YDependence::None => kernel(t, x, self.mu.point(0), out),
            YDependence::Affine => kernel(t, x, self.mean.as_deref().expect("mean cached"), out),
            YDependence::General => {
                let mut value = vec![0.0; out.len()];
                let mut acc = vec![CompensatedSum::new(); out.len()];
                for (y, w) in self.mu.iter() {
                    kernel(t, x, y, &mut value);
                    if value.iter().any(|v| !v.is_finite()) {
                        return Err(Error::KernelOverflow { t, x: x.to_vec(), y: y.to_vec() });
                    }
                    for (a, v) in acc.iter_mut().zip(&value) {
                        a.add(w * v);
                    }
                }
                for (o, a) in out.iter_mut().zip(&acc) {
                    *o = a.value();
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            let y = match form {
                YDependence::Affine => self.mean.clone().unwrap_or_default(),
                _ => self.mu.point(0).to_vec(),
            };
            return Err(Error::KernelOverflow { t, x: x.to_vec(), y });
        }
        Ok(())
    }

    pub fn drift_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.integrate(&self.spec.drift, self.spec.drift_y, t, x, out)
    }

    pub fn diffusion_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.integrate(&self.spec.diffusion, self.spec.diffusion_y, t, x, out)
    }

    pub fn drift(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.spec.d];
        self.drift_into(t, x, &mut out)?;
        Ok(out)
    }

    pub fn diffusion(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.spec.d * self.spec.d1];
        self.diffusion_into(t, x, &mut out)?;
        Ok(out)
    }

    pub fn coefficients(&self, t: f64, x: &[f64]) -> Result<CoefficientValue> {
        let drift = self.drift(t, x)?;
        let diffusion = self.diffusion(t, x)?;
        let diffusion_square = gram(&diffusion, self.spec.d, self.spec.d1);
        Ok(CoefficientValue { drift, diffusion, diffusion_square })
    }
}

fn check_point(spec: &KernelSpec, x: &[f64]) -> Result<()> {
    if x.len() != spec.d {
        return Err(Error::DimensionMismatch(format!("x has {} entries, d={}", x.len(), spec.d)));
    }
    Ok(())
}

/// `B[t,x,μ] = Σ_j w_j b(t,x,y_j)`.
pub fn drift_functional(spec: &KernelSpec, t: f64, x: &[f64], mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
    check_point(spec, x)?;
    BoundMeasure::new(spec, mu)?.drift(t, x)
}

/// `Σ[t,x,μ]`, row-major `d × d1`.
pub fn diffusion_functional(spec: &KernelSpec, t: f64, x: &[f64], mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
    check_point(spec, x)?;
    BoundMeasure::new(spec, mu)?.diffusion(t, x)
}

/// `A[t,x,μ] = Σ Σᵀ`, row-major `d × d`.
pub fn diffusion_square(spec: &KernelSpec, t: f64, x: &[f64], mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
    let sigma = diffusion_functional(spec, t, x, mu)?;
    Ok(gram(&sigma, spec.d, spec.d1))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn unit_diffusion(d: usize, d1: usize) -> KernelFn {
    Arc::new(move |_, _, _, out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            out[i * d1 + i] = 1.0;
        }
    })
}

fn radial_drift(d: usize, profile: impl Fn(f64) -> f64 + Send + Sync + 'static) -> KernelFn {
    let scale = 1.0 / (d as f64).sqrt();
    Arc::new(move |_, x: &[f64], _, out: &mut [f64]| {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let value = profile(r) * scale;
        out.iter_mut().for_each(|o| *o = value);
    })
}

fn param(params: &[f64], k: usize, default: f64) -> f64 {
    params.get(k).copied().unwrap_or(default)
}

/// One-dimensional builtin (`d = d1 = 1`).
pub fn builtin_kernel(name: &str, params: &[f64]) -> Result<KernelSpec> {
    builtin_kernel_dims(name, params, 1, 1)
}

/// Builtin kernel in state dimension `d` with `d1`-dimensional noise.
pub fn builtin_kernel_dims(name: &str, params: &[f64], d: usize, d1: usize) -> Result<KernelSpec> {
    let sqrt_d = (d as f64).sqrt();
    let unit = unit_diffusion(d, d1);
    let zero: KernelFn = Arc::new(|_, _, _, out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0));
    let mut spec = match name {
        "zero_drift_unit_diffusion" => KernelSpec::custom(
            name,
            d,
            d1,
            zero,
            YDependence::None,
            unit,
            YDependence::None,
            DeclaredRegularity {
                drift_bound: 0.0,
                diffusion_bound: sqrt_d,
                lipschitz_y: 0.0,
                lipschitz_x_sigma: 0.0,
                drift_modulus: ModulusFamily::Linear { slope: 0.0 },
            },
        )?,
        "mean_field_ou" => KernelSpec::custom(
            name,
            d,
            d1,
            Arc::new(|_, x: &[f64], y: &[f64], out: &mut [f64]| {
                for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
                    *o = -(xi - yi);
                }
            }),
            YDependence::Affine,
            unit,
            YDependence::None,
            DeclaredRegularity {
                drift_bound: f64::INFINITY,
                diffusion_bound: sqrt_d,
                lipschitz_y: 1.0,
                lipschitz_x_sigma: 0.0,
                drift_modulus: ModulusFamily::Linear { slope: 1.0 },
            },
        )?,
        "bounded_tanh_attraction" => {
            let strength = param(params, 0, 1.0);
            if !(strength.is_finite() && strength >= 0.0) {
                return Err(Error::InvalidParameter(format!("tanh strength {strength}")));
            }
            KernelSpec::custom(
                name,
                d,
                d1,
                Arc::new(move |_, x: &[f64], y: &[f64], out: &mut [f64]| {
                    for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
                        *o = strength * (yi - xi).tanh();
                    }
                }),
                YDependence::General,
                unit,
                YDependence::None,
                DeclaredRegularity {
                    drift_bound: strength * sqrt_d,
                    diffusion_bound: sqrt_d,
                    lipschitz_y: strength,
                    lipschitz_x_sigma: 0.0,
                    drift_modulus: ModulusFamily::Linear { slope: strength },
                },
            )?
        }
        "dini_power_drift" => {
            let alpha = param(params, 0, 0.5);
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(Error::InvalidParameter(format!("power exponent {alpha} outside (0,1]")));
            }
            KernelSpec::custom(
                name,
                d,
                d1,
                radial_drift(d, move |r| r.min(1.0).powf(alpha)),
                YDependence::None,
                unit,
                YDependence::None,
                DeclaredRegularity {
                    drift_bound: 1.0,
                    diffusion_bound: sqrt_d,
                    lipschitz_y: 0.0,
                    lipschitz_x_sigma: 0.0,
                    drift_modulus: ModulusFamily::Power { alpha },
                },
            )?
        }
        "log_modulus_drift" => {
            let beta = param(params, 0, 1.0);
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(Error::InvalidParameter(format!("log exponent {beta} must be positive")));
            }
            KernelSpec::custom(
                name,
                d,
                d1,
                radial_drift(d, move |r| log_modulus_profile(r, beta)),
                YDependence::None,
                unit,
                YDependence::None,
                DeclaredRegularity {
                    drift_bound: 1.0,
                    diffusion_bound: sqrt_d,
                    lipschitz_y: 0.0,
                    lipschitz_x_sigma: 0.0,
                    drift_modulus: ModulusFamily::LogPower { beta },
                },
            )?
        }
        "degenerate_diffusion" => KernelSpec::custom(
            name,
            d,
            d1,
            Arc::new(|_, x: &[f64], _, out: &mut [f64]| {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = sign(*xi);
                }
            }),
            YDependence::None,
            zero,
            YDependence::None,
            DeclaredRegularity {
                drift_bound: sqrt_d,
                diffusion_bound: 0.0,
                lipschitz_y: 0.0,
                lipschitz_x_sigma: 0.0,
                drift_modulus: ModulusFamily::Jump { size: 2.0 * sqrt_d },
            },
        )?,
        _ => {
            return Err(Error::UnknownKernel {
                name: name.to_string(),
                registry: REGISTRY.iter().map(|s| s.to_string()).collect(),
            })
        }
    };
    spec.params = params.to_vec();
    Ok(spec)
}

/// Kernel tabulated on a tensor grid in `(t, x, y)` with `d = 1`, read from CSV
/// with header `t,x,y,b_1,sigma_11,...,sigma_1{d1}` and evaluated by trilinear
/// interpolation (clamped outside the grid).
pub fn table_kernel(path: &Path) -> Result<KernelSpec> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    table_kernel_from_records(&headers, reader.records().map(|r| r.map_err(Error::from)), path.display().to_string())
}

fn table_kernel_from_records(
    headers: &[String],
    records: impl Iterator<Item = Result<csv::StringRecord>>,
    label: String,
) -> Result<KernelSpec> {
    if headers.len() < 5 || headers[0] != "t" || headers[1] != "x" || headers[2] != "y" || headers[3] != "b_1" {
        return Err(Error::Table(format!(
            "header must start with t,x,y,b_1 and list sigma_11..sigma_1d1 (table kernels have d = 1), got {}",
            headers.join(",")
        )));
    }
    let d1 = headers.len() - 4;
    for (k, h) in headers[4..].iter().enumerate() {
        if *h != format!("sigma_1{}", k + 1) {
            return Err(Error::Table(format!("expected column sigma_1{}, found {h}", k + 1)));
        }
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in records.enumerate() {
        let rec = rec?;
        let row: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Table(format!("row {}: {e}", line + 2)))?;
        if row.len() != headers.len() || row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Table(format!("row {}: expected {} finite values", line + 2, headers.len())));
        }
        rows.push(row);
    }
    let axis = |k: usize| {
        let mut v: Vec<f64> = rows.iter().map(|r| r[k]).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let (ts, xs, ys) = (axis(0), axis(1), axis(2));
    if rows.len() != ts.len() * xs.len() * ys.len() {
        return Err(Error::Table(format!(
            "{} rows do not form a full {}x{}x{} grid",
            rows.len(),
            ts.len(),
            xs.len(),
            ys.len()
        )));
    }
    let width = 1 + d1;
    let mut values = vec![f64::NAN; rows.len() * width];
    for r in &rows {
        let i = ts.partition_point(|v| *v < r[0]);
        let j = xs.partition_point(|v| *v < r[1]);
        let k = ys.partition_point(|v| *v < r[2]);
        let cell = ((i * xs.len() + j) * ys.len() + k) * width;
        if !values[cell].is_nan() {
            return Err(Error::Table(format!("duplicate grid point ({}, {}, {})", r[0], r[1], r[2])));
        }
        values[cell..cell + width].copy_from_slice(&r[3..]);
    }
    let grid = Arc::new(TableGrid { ts, xs, ys, values, width });

    let at = |i: usize, j: usize, k: usize, c: usize| grid.values[((i * grid.xs.len() + j) * grid.ys.len() + k) * width + c];
    let mut drift_bound = 0.0_f64;
    let mut diffusion_bound = 0.0_f64;
    let mut lip_y = 0.0_f64;
    let mut lip_x_sigma = 0.0_f64;
    let mut slope_x_b = 0.0_f64;
    for i in 0..grid.ts.len() {
        for j in 0..grid.xs.len() {
            for k in 0..grid.ys.len() {
                drift_bound = drift_bound.max(at(i, j, k, 0).abs());
                diffusion_bound =
                    diffusion_bound.max((1..width).map(|c| at(i, j, k, c).powi(2)).sum::<f64>().sqrt());
                if k + 1 < grid.ys.len() {
                    let dy = grid.ys[k + 1] - grid.ys[k];
                    lip_y = lip_y.max((at(i, j, k + 1, 0) - at(i, j, k, 0)).abs() / dy);
                    let ds = (1..width).map(|c| (at(i, j, k + 1, c) - at(i, j, k, c)).powi(2)).sum::<f64>().sqrt();
                    lip_y = lip_y.max(ds / dy);
                }
                if j + 1 < grid.xs.len() {
                    let dx = grid.xs[j + 1] - grid.xs[j];
                    slope_x_b = slope_x_b.max((at(i, j + 1, k, 0) - at(i, j, k, 0)).abs() / dx);
                    let ds = (1..width).map(|c| (at(i, j + 1, k, c) - at(i, j, k, c)).powi(2)).sum::<f64>().sqrt();
                    lip_x_sigma = lip_x_sigma.max(ds / dx);
                }
            }
        }
    }
    let g1 = grid.clone();
    let drift: KernelFn = Arc::new(move |t, x: &[f64], y: &[f64], out: &mut [f64]| {
        out[0] = g1.interpolate(t, x[0], y[0], 0);
    });
    let g2 = grid;
    let diffusion: KernelFn = Arc::new(move |t, x: &[f64], y: &[f64], out: &mut [f64]| {
        for (c, o) in out.iter_mut().enumerate() {
            *o = g2.interpolate(t, x[0], y[0], c + 1);
        }
    });
    let mut spec = KernelSpec::custom(
        format!("table:{label}"),
        1,
        d1,
        drift,
        YDependence::General,
        diffusion,
        YDependence::General,
        DeclaredRegularity {
            drift_bound,
            diffusion_bound,
            lipschitz_y: lip_y,
            lipschitz_x_sigma: lip_x_sigma,
            drift_modulus: ModulusFamily::Linear { slope: slope_x_b },
        },
    )?;
    spec.params = Vec::new();
    Ok(spec)
}

struct TableGrid {
    ts: Vec<f64>,
    xs: Vec<f64>,
    ys: Vec<f64>,
    values: Vec<f64>,
    width: usize,
}

fn bracket(axis: &[f64], v: f64) -> (usize, usize, f64) {
    if axis.len() == 1 || v <= axis[0] {
        return (0, 0, 0.0);
    }
    let last = axis.len() - 1;
    if v >= axis[last] {
        return (last, last, 0.0);
    }
    let hi = axis.partition_point(|a| *a <= v);
    let lo = hi - 1;
    (lo, hi, (v - axis[lo]) / (axis[hi] - axis[lo]))
}

impl TableGrid {
    fn interpolate(&self, t: f64, x: f64, y: f64, c: usize) -> f64 {
        let (i0, i1, wt) = bracket(&self.ts, t);
        let (j0, j1, wx) = bracket(&self.xs, x);
        let (k0, k1, wy) = bracket(&self.ys, y);
        let at = |i: usize, j: usize, k: usize| self.values[((i * self.xs.len() + j) * self.ys.len() + k) * self.width + c];
        let lerp = |a: f64, b: f64, w: f64| a + w * (b - a);
        let face = |i: usize| {
            lerp(
                lerp(at(i, j0, k0), at(i, j0, k1), wy),
                lerp(at(i, j1, k0), at(i, j1, k1), wy),
                wx,
            )
        };
        lerp(face(i0), face(i1), wt)
    }
}
