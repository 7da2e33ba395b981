//! Euler–Maruyama particle approximation.
//!
//! Each step freezes the empirical measure of the whole ensemble, then moves
//! every particle with `X_j ← X_j + B[t, X_j, μ^N] dt + Σ[t, X_j, μ^N] ΔW_j`.
//! Particle updates run in parallel; noise comes from counter-based streams
//! indexed by step, so results do not depend on the thread count.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{BoundMeasure, KernelSpec};
use crate::measure::EmpiricalMeasure;
use crate::numeric::CompensatedSum;
use crate::rng::{self, Domain};

/// Sampler name plus parameters, e.g. `{"sampler": "normal", "params": [0, 1]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialLaw {
    pub sampler: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

impl InitialLaw {
    pub fn delta(point: f64) -> Self {
        Self { sampler: "delta".into(), params: vec![point] }
    }

    pub fn normal(mean: f64, std: f64) -> Self {
        Self { sampler: "normal".into(), params: vec![mean, std] }
    }

    pub fn uniform_box(low: f64, high: f64) -> Self {
        Self { sampler: "uniform_box".into(), params: vec![low, high] }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match self.sampler.as_str() {
            "delta" => {
                if !(self.params.len() <= 1 || self.params.len() == d) {
                    return Err(Error::InvalidParameter(format!(
                        "delta law takes 1 or d={d} coordinates, got {}",
                        self.params.len()
                    )));
                }
            }
            "normal" => {
                let std = self.params.get(1).copied().unwrap_or(1.0);
                if !(std >= 0.0 && std.is_finite()) {
                    return Err(Error::InvalidParameter(format!("normal std {std}")));
                }
            }
            "uniform_box" => {
                let low = self.params.first().copied().unwrap_or(-1.0);
                let high = self.params.get(1).copied().unwrap_or(1.0);
                if !(low < high) {
                    return Err(Error::InvalidParameter(format!("uniform_box needs low < high, got [{low}, {high}]")));
                }
            }
            other => return Err(Error::UnknownSampler(other.to_string())),
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter("initial-law parameters must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub n_particles: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    #[serde(default = "default_initial_law")]
    pub initial_law: InitialLaw,
    /// Keep full particle paths in the record.
    #[serde(default)]
    pub record_paths: bool,
}

fn default_initial_law() -> InitialLaw {
    InitialLaw::delta(0.0)
}

impl SolverConfig {
    pub fn new(n_particles: usize, dt: f64, horizon: f64, seed: u64, initial_law: InitialLaw) -> Self {
        Self { n_particles, dt, horizon, seed, initial_law, record_paths: false }
    }

    pub fn with_paths(mut self) -> Self {
        self.record_paths = true;
        self
    }

    /// Number of Euler steps `T/dt`; errors unless it is a positive integer.
    pub fn steps(&self) -> Result<usize> {
        if self.n_particles == 0 {
            return Err(Error::Schema("n_particles must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Schema(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Schema(format!("horizon must be positive, got {}", self.horizon)));
        }
        integral_ratio(self.horizon, self.dt).ok_or_else(|| Error::Schema("horizon/dt not integral".into()))
    }
}

/// `a / b` when it is a positive integer up to relative rounding.
pub(crate) fn integral_ratio(a: f64, b: f64) -> Option<usize> {
    let r = a / b;
    let k = r.round();
    if k >= 1.0 && (r - k).abs() <= 1e-9 * k.max(1.0) {
        Some(k as usize)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub time: f64,
    /// Time at `step_index = 0`; restarted runs begin from a nonzero origin.
    pub origin: f64,
    pub step_index: usize,
    pub d: usize,
    /// Row-major `N × d`.
    pub states: Vec<f64>,
}

impl Ensemble {
    pub fn from_states(d: usize, states: Vec<f64>) -> Self {
        Self { time: 0.0, origin: 0.0, step_index: 0, d, states }
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn particle(&self, j: usize) -> &[f64] {
        &self.states[j * self.d..(j + 1) * self.d]
    }

    /// Same states, clock restarted at `origin`.
    pub fn restarted_at(&self, origin: f64) -> Self {
        Self { time: origin, origin, step_index: 0, d: self.d, states: self.states.clone() }
    }

    pub fn empirical_measure(&self) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::uniform(self.d, self.states.clone())
    }
}

/// Draws `N` i.i.d. initial states from the configured law using the seed's
/// dedicated initial-law stream.
pub fn sample_initial(config: &SolverConfig, d: usize) -> Result<Ensemble> {
    let law = &config.initial_law;
    law.validate(d)?;
    let n = config.n_particles;
    let mut states = vec![0.0; n * d];
    match law.sampler.as_str() {
        "delta" => {
            for row in states.chunks_exact_mut(d) {
                for (k, v) in row.iter_mut().enumerate() {
                    *v = match law.params.len() {
                        0 => 0.0,
                        1 => law.params[0],
                        _ => law.params[k],
                    };
                }
            }
        }
        "normal" => {
            let mean = law.params.first().copied().unwrap_or(0.0);
            let std = law.params.get(1).copied().unwrap_or(1.0);
            let mut r = rng::stream(config.seed, Domain::Initial, 0);
            for v in states.iter_mut() {
                let z: f64 = r.sample(StandardNormal);
                *v = mean + std * z;
            }
        }
        "uniform_box" => {
            let low = law.params.first().copied().unwrap_or(-1.0);
            let high = law.params.get(1).copied().unwrap_or(1.0);
            let mut r = rng::stream(config.seed, Domain::Initial, 0);
            for v in states.iter_mut() {
                *v = r.random_range(low..high);
            }
        }
        other => return Err(Error::UnknownSampler(other.to_string())),
    }
    Ok(Ensemble::from_states(d, states))
}

/// One synchronous Euler–Maruyama step with caller-supplied increments
/// (row-major `N × d1`, entries ~ N(0, dt)).
pub fn step_euler(ens: &Ensemble, spec: &KernelSpec, noise: &[f64], dt: f64) -> Result<Ensemble> {
    let d = spec.d;
    let d1 = spec.d1;
    if ens.d != d {
        return Err(Error::DimensionMismatch(format!("ensemble d={} vs kernel d={d}", ens.d)));
    }
    let n = ens.len();
    if noise.len() != n * d1 {
        return Err(Error::LengthMismatch { left: noise.len(), right: n * d1 });
    }
    let mu = ens.empirical_measure()?;
    let bound = BoundMeasure::new(spec, &mu)?;
    let t = ens.time;
    let mut next = ens.states.clone();
    let outcome: Vec<Option<Error>> = next
        .par_chunks_mut(d)
        .zip(noise.par_chunks(d1))
        .enumerate()
        .with_min_len(64)
        .map(|(j, (x, dw))| {
            let mut drift = vec![0.0; d];
            let mut sigma = vec![0.0; d * d1];
            let current = ens.particle(j);
            if let Err(e) = bound.drift_into(t, current, &mut drift) {
                return Some(e);
            }
            if let Err(e) = bound.diffusion_into(t, current, &mut sigma) {
                return Some(e);
            }
            for i in 0..d {
                let mut dx = drift[i] * dt;
                for k in 0..d1 {
                    dx += sigma[i * d1 + k] * dw[k];
                }
                x[i] = current[i] + dx;
                if !x[i].is_finite() {
                    return Some(Error::BlowUp { step: ens.step_index, particle: j });
                }
            }
            None
        })
        .collect();
    if let Some(err) = outcome.into_iter().flatten().next() {
        return Err(err);
    }
    Ok(Ensemble {
        time: ens.origin + (ens.step_index + 1) as f64 * dt,
        origin: ens.origin,
        step_index: ens.step_index + 1,
        d,
        states: next,
    })
}

/// Per-step summaries and, optionally, full paths.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub d: usize,
    pub n_particles: usize,
    pub kernel: String,
    pub config: SolverConfig,
    pub times: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major `d × d` population covariance per step.
    pub covariances: Vec<Vec<f64>>,
    pub second_moments: Vec<f64>,
    /// Row-major `[step][particle][dim]`.
    pub paths: Option<Vec<f64>>,
}

impl TrajectoryRecord {
    fn new(spec: &KernelSpec, config: &SolverConfig, steps: usize) -> Self {
        Self {
            d: spec.d,
            n_particles: config.n_particles,
            kernel: spec.name.clone(),
            config: config.clone(),
            times: Vec::with_capacity(steps + 1),
            means: Vec::with_capacity(steps + 1),
            covariances: Vec::with_capacity(steps + 1),
            second_moments: Vec::with_capacity(steps + 1),
            paths: config.record_paths.then(|| Vec::with_capacity((steps + 1) * config.n_particles * spec.d)),
        }
    }

    fn push(&mut self, ens: &Ensemble) {
        let s = summarize(ens);
        self.times.push(ens.time);
        self.means.push(s.mean);
        self.covariances.push(s.covariance);
        self.second_moments.push(s.second_moment);
        if let Some(p) = self.paths.as_mut() {
            p.extend_from_slice(&ens.states);
        }
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Particle states at recorded step `k`.
    pub fn states_at(&self, k: usize) -> Option<&[f64]> {
        let stride = self.n_particles * self.d;
        self.paths.as_ref().map(|p| &p[k * stride..(k + 1) * stride])
    }

    pub fn final_variance(&self) -> f64 {
        let cov = self.covariances.last().expect("nonempty record");
        (0..self.d).map(|i| cov[i * self.d + i]).sum()
    }
}

pub struct Summary {
    pub mean: Vec<f64>,
    pub covariance: Vec<f64>,
    pub second_moment: f64,
}

/// Ensemble mean, population covariance and mean squared norm, accumulated in
/// ascending particle order.
pub fn summarize(ens: &Ensemble) -> Summary {
    let d = ens.d;
    let n = ens.len() as f64;
    let mut mean_acc = vec![CompensatedSum::new(); d];
    let mut m2 = CompensatedSum::new();
    for x in ens.states.chunks_exact(d) {
        for (a, v) in mean_acc.iter_mut().zip(x) {
            a.add(*v);
        }
        m2.add(x.iter().map(|v| v * v).sum());
    }
    let mean: Vec<f64> = mean_acc.iter().map(|a| a.value() / n).collect();
    let mut cov_acc = vec![CompensatedSum::new(); d * d];
    for x in ens.states.chunks_exact(d) {
        for i in 0..d {
            for k in 0..d {
                cov_acc[i * d + k].add((x[i] - mean[i]) * (x[k] - mean[k]));
            }
        }
    }
    Summary {
        mean,
        covariance: cov_acc.iter().map(|a| a.value() / n).collect(),
        second_moment: m2.value() / n,
    }
}

/// Runs the particle system from `sample_initial` to the horizon.
pub fn simulate(spec: &KernelSpec, config: &SolverConfig) -> Result<TrajectoryRecord> {
    let initial = sample_initial(config, spec.d)?;
    simulate_from(spec, config, initial)
}

/// Runs the particle system from a given initial ensemble.
pub fn simulate_from(spec: &KernelSpec, config: &SolverConfig, initial: Ensemble) -> Result<TrajectoryRecord> {
    let steps = config.steps()?;
    if initial.len() != config.n_particles {
        return Err(Error::ConfigMismatch(format!(
            "initial ensemble has {} particles, config has {}",
            initial.len(),
            config.n_particles
        )));
    }
    let mut record = TrajectoryRecord::new(spec, config, steps);
    let mut ens = initial;
    record.push(&ens);
    let mut noise = vec![0.0; config.n_particles * spec.d1];
    for k in 0..steps {
        rng::fill_increments(config.seed, k as u64, spec.d1, config.dt, &mut noise);
        ens = step_euler(&ens, spec, &noise, config.dt)?;
        record.push(&ens);
    }
    Ok(record)
}

/// How the second solution of a coupled pair differs from the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Perturbation {
    /// Identical solutions.
    None,
    /// Shift the second solution's initial states by `delta` along the first axis.
    InitialShift { delta: f64 },
    /// Gaussian-smooth the second solution's drift in `x` with width `h`.
    DriftMollification { h: f64 },
    /// Run the second solution with step `dt / factor` on the same Wiener path.
    DtMismatch {
        #[serde(default = "default_mismatch_factor")]
        factor: usize,
    },
}

fn default_mismatch_factor() -> usize {
    2
}

impl Perturbation {
    pub fn kind(&self) -> &'static str {
        match self {
            Perturbation::None => "none",
            Perturbation::InitialShift { .. } => "initial_shift",
            Perturbation::DriftMollification { .. } => "drift_mollification",
            Perturbation::DtMismatch { .. } => "dt_mismatch",
        }
    }

    pub fn size(&self) -> f64 {
        match self {
            Perturbation::None => 0.0,
            Perturbation::InitialShift { delta } => *delta,
            Perturbation::DriftMollification { h } => *h,
            Perturbation::DtMismatch { factor } => *factor as f64,
        }
    }

    /// Second kernel, config and initial ensemble for a pair whose first
    /// member is `(spec, config, initial)`.
    pub fn apply(&self, spec: &KernelSpec, config: &SolverConfig, initial: &Ensemble) -> Result<(KernelSpec, SolverConfig, Ensemble)> {
        let mut spec_b = spec.clone();
        let mut config_b = config.clone();
        let mut init_b = initial.clone();
        match self {
            Perturbation::None => {}
            Perturbation::InitialShift { delta } => {
                if !delta.is_finite() {
                    return Err(Error::InvalidParameter(format!("shift {delta}")));
                }
                for row in init_b.states.chunks_exact_mut(init_b.d) {
                    row[0] += delta;
                }
            }
            Perturbation::DriftMollification { h } => spec_b = spec.mollified(*h)?,
            Perturbation::DtMismatch { factor } => {
                if *factor == 0 {
                    return Err(Error::InvalidParameter("dt mismatch factor must be >= 1".into()));
                }
                config_b.dt = config.dt / *factor as f64;
            }
        }
        Ok((spec_b, config_b, init_b))
    }
}

/// `mean_j |X¹_j(t) − X²_j(t)|²` on the common time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub perturbation: String,
    pub size: f64,
}

impl DifferenceTrace {
    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("nonempty trace")
    }
}

pub fn mean_square_difference(a: &[f64], b: &[f64], d: usize) -> f64 {
    let n = (a.len() / d) as f64;
    let mut acc = CompensatedSum::new();
    for (x, y) in a.chunks_exact(d).zip(b.chunks_exact(d)) {
        acc.add(x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum());
    }
    acc.value() / n
}

/// Two particle systems on one probability space: same Wiener path, same
/// initial draws unless the second side supplies its own.
///
/// The time steps may differ by an integer factor; the finer side consumes the
/// fine increments directly and the coarser side their sums. Records and the
/// difference trace live on the coarse grid.
pub fn simulate_coupled(
    spec_a: &KernelSpec,
    config_a: &SolverConfig,
    init_a: Ensemble,
    spec_b: &KernelSpec,
    config_b: &SolverConfig,
    init_b: Ensemble,
) -> Result<(TrajectoryRecord, TrajectoryRecord, DifferenceTrace)> {
    let run = simulate_coupled_run(spec_a, config_a, init_a, spec_b, config_b, init_b)?;
    Ok((run.a, run.b, run.trace))
}

/// Coupled pair with both terminal ensembles, for restarting.
#[derive(Debug, Clone)]
pub struct CoupledRun {
    pub a: TrajectoryRecord,
    pub b: TrajectoryRecord,
    pub trace: DifferenceTrace,
    pub final_a: Ensemble,
    pub final_b: Ensemble,
}

pub fn simulate_coupled_run(
    spec_a: &KernelSpec,
    config_a: &SolverConfig,
    init_a: Ensemble,
    spec_b: &KernelSpec,
    config_b: &SolverConfig,
    init_b: Ensemble,
) -> Result<CoupledRun> {
    if config_a.n_particles != config_b.n_particles {
        return Err(Error::ConfigMismatch(format!(
            "particle counts differ: {} vs {}",
            config_a.n_particles, config_b.n_particles
        )));
    }
    if spec_a.d != spec_b.d || spec_a.d1 != spec_b.d1 {
        return Err(Error::ConfigMismatch("kernel dimensions differ".into()));
    }
    if (config_a.horizon - config_b.horizon).abs() > 1e-12 * config_a.horizon {
        return Err(Error::ConfigMismatch("horizons differ".into()));
    }
    let steps_a = config_a.steps()?;
    let steps_b = config_b.steps()?;
    let (coarse_steps, fine_dt, factor_a, factor_b) = if steps_a <= steps_b {
        let f = steps_b / steps_a;
        if f * steps_a != steps_b {
            return Err(Error::ConfigMismatch("time steps are not integer multiples".into()));
        }
        (steps_a, config_b.dt, f, 1)
    } else {
        let f = steps_a / steps_b;
        if f * steps_b != steps_a {
            return Err(Error::ConfigMismatch("time steps are not integer multiples".into()));
        }
        (steps_b, config_a.dt, 1, f)
    };
    let seed = config_a.seed;
    let n = config_a.n_particles;
    let d1 = spec_a.d1;
    let d = spec_a.d;

    let coarse_config = |c: &SolverConfig, steps| {
        let mut c = c.clone();
        c.dt = c.horizon / steps as f64;
        c
    };
    let rec_cfg_a = if factor_a == 1 { config_a.clone() } else { coarse_config(config_a, coarse_steps) };
    let rec_cfg_b = if factor_b == 1 { config_b.clone() } else { coarse_config(config_b, coarse_steps) };
    let mut rec_a = TrajectoryRecord::new(spec_a, &rec_cfg_a, coarse_steps);
    let mut rec_b = TrajectoryRecord::new(spec_b, &rec_cfg_b, coarse_steps);

    let mut ens_a = init_a;
    let mut ens_b = init_b;
    let mut trace = DifferenceTrace {
        times: vec![ens_a.time],
        values: vec![mean_square_difference(&ens_a.states, &ens_b.states, d)],
        perturbation: String::new(),
        size: 0.0,
    };
    rec_a.push(&ens_a);
    rec_b.push(&ens_b);

    let fine_per_coarse = factor_a.max(factor_b);
    let mut fine = vec![0.0; n * d1];
    let mut acc = vec![0.0; n * d1];
    for k in 0..coarse_steps {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..fine_per_coarse {
            let fine_step = (k * fine_per_coarse + i) as u64;
            rng::fill_increments(seed, fine_step, d1, fine_dt, &mut fine);
            acc.par_iter_mut().zip(fine.par_iter()).for_each(|(a, f)| *a += f);
            if factor_a == 1 {
                ens_a = step_fine(&ens_a, spec_a, &fine, fine_dt)?;
            }
            if factor_b == 1 {
                ens_b = step_fine(&ens_b, spec_b, &fine, fine_dt)?;
            }
        }
        if factor_a > 1 {
            ens_a = step_euler(&ens_a, spec_a, &acc, rec_cfg_a.dt)?;
        }
        if factor_b > 1 {
            ens_b = step_euler(&ens_b, spec_b, &acc, rec_cfg_b.dt)?;
        }
        rec_a.push(&ens_a);
        rec_b.push(&ens_b);
        trace.times.push(ens_a.time);
        trace.values.push(mean_square_difference(&ens_a.states, &ens_b.states, d));
    }
    Ok(CoupledRun { a: rec_a, b: rec_b, trace, final_a: ens_a, final_b: ens_b })
}

fn step_fine(ens: &Ensemble, spec: &KernelSpec, noise: &[f64], dt: f64) -> Result<Ensemble> {
    step_euler(ens, spec, noise, dt)
}

/// Coupled pair built from one configuration and a perturbation.
pub fn simulate_perturbed(
    spec: &KernelSpec,
    config: &SolverConfig,
    initial: Ensemble,
    perturbation: &Perturbation,
) -> Result<(TrajectoryRecord, TrajectoryRecord, DifferenceTrace)> {
    let (spec_b, config_b, init_b) = perturbation.apply(spec, config, &initial)?;
    let (a, b, mut trace) = simulate_coupled(spec, config, initial, &spec_b, &config_b, init_b)?;
    trace.perturbation = perturbation.kind().to_string();
    trace.size = perturbation.size();
    Ok((a, b, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::builtin_kernel;

    #[test]
    fn delta_initial_law() {
        let cfg = SolverConfig::new(3, 0.1, 1.0, 0, InitialLaw::delta(0.0));
        assert_eq!(sample_initial(&cfg, 1).unwrap().states, vec![0.0; 3]);
    }

    #[test]
    fn unknown_sampler_rejected() {
        let cfg = SolverConfig::new(3, 0.1, 1.0, 0, InitialLaw { sampler: "cauchy".into(), params: vec![] });
        assert!(matches!(sample_initial(&cfg, 1), Err(Error::UnknownSampler(_))));
    }

    #[test]
    fn steps_must_be_integral() {
        let cfg = SolverConfig::new(3, 0.3, 1.0, 0, InitialLaw::delta(0.0));
        assert!(cfg.steps().is_err());
        let cfg = SolverConfig::new(3, 0.001, 0.5, 0, InitialLaw::delta(0.0));
        assert_eq!(cfg.steps().unwrap(), 500);
    }

    #[test]
    fn euler_step_examples() {
        let k = builtin_kernel("zero_drift_unit_diffusion", &[]).unwrap();
        let ens = Ensemble::from_states(1, vec![0.0]);
        let next = step_euler(&ens, &k, &[0.7], 0.1).unwrap();
        assert_eq!(next.states, vec![0.7]);

        let ou = builtin_kernel("mean_field_ou", &[]).unwrap();
        let ens = Ensemble::from_states(1, vec![0.0, 1.0, 2.0]);
        let next = step_euler(&ens, &ou, &[0.0; 3], 0.1).unwrap();
        let expected = [0.1, 1.0, 1.9];
        for (a, b) in next.states.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(next.step_index, 1);
    }

    #[test]
    fn constant_drift_without_noise() {
        use crate::kernels::{DeclaredRegularity, KernelSpec, ModulusFamily, YDependence};
        use std::sync::Arc;
        let k = KernelSpec::custom(
            "const",
            1,
            1,
            Arc::new(|_, _, _, o: &mut [f64]| o[0] = 2.5),
            YDependence::None,
            Arc::new(|_, _, _, o: &mut [f64]| o[0] = 0.0),
            YDependence::None,
            DeclaredRegularity {
                drift_bound: 2.5,
                diffusion_bound: 0.0,
                lipschitz_y: 0.0,
                lipschitz_x_sigma: 0.0,
                drift_modulus: ModulusFamily::Linear { slope: 0.0 },
            },
        )
        .unwrap();
        let next = step_euler(&Ensemble::from_states(1, vec![1.0]), &k, &[0.3], 0.2).unwrap();
        assert_eq!(next.states, vec![1.5]);
    }

    #[test]
    fn blow_up_is_reported_with_indices() {
        use crate::kernels::{DeclaredRegularity, KernelSpec, ModulusFamily, YDependence};
        use std::sync::Arc;
        let k = KernelSpec::custom(
            "explode",
            1,
            1,
            Arc::new(|_, x: &[f64], _, o: &mut [f64]| o[0] = if x[0] > 0.5 { f64::MAX } else { 0.0 }),
            YDependence::None,
            Arc::new(|_, _, _, o: &mut [f64]| o[0] = 1.0),
            YDependence::None,
            DeclaredRegularity {
                drift_bound: f64::INFINITY,
                diffusion_bound: 1.0,
                lipschitz_y: 0.0,
                lipschitz_x_sigma: 0.0,
                drift_modulus: ModulusFamily::Jump { size: f64::MAX },
            },
        )
        .unwrap();
        let ens = Ensemble::from_states(1, vec![0.0, 1.0, 2.0]);
        let err = step_euler(&ens, &k, &[0.0; 3], 10.0).unwrap_err();
        assert!(matches!(err, Error::BlowUp { step: 0, particle: 1 }), "{err:?}");
    }

    #[test]
    fn record_lengths() {
        let k = builtin_kernel("mean_field_ou", &[]).unwrap();
        let cfg = SolverConfig::new(10, 0.1, 1.0, 3, InitialLaw::normal(0.0, 1.0)).with_paths();
        let rec = simulate(&k, &cfg).unwrap();
        assert_eq!(rec.times.len(), 11);
        assert_eq!(rec.means.len(), 11);
        assert_eq!(rec.second_moments.len(), 11);
        assert_eq!(rec.paths.as_ref().unwrap().len(), 11 * 10);
        assert!((rec.times[10] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coupled_identical_is_exactly_zero() {
        let k = builtin_kernel("bounded_tanh_attraction", &[]).unwrap();
        let cfg = SolverConfig::new(20, 0.01, 0.2, 9, InitialLaw::normal(0.0, 1.0));
        let init = sample_initial(&cfg, 1).unwrap();
        let (a, b, trace) = simulate_perturbed(&k, &cfg, init, &Perturbation::None).unwrap();
        assert!(trace.values.iter().all(|v| *v == 0.0));
        assert_eq!(a.means, b.means);
        // the coupled first solution is the plain simulation
        assert_eq!(simulate(&k, &cfg).unwrap().means, a.means);
    }

    #[test]
    fn coupled_dt_mismatch_shares_the_wiener_path() {
        // zero drift, unit diffusion: both sides are the same Brownian path at coarse times
        let k = builtin_kernel("zero_drift_unit_diffusion", &[]).unwrap();
        let cfg = SolverConfig::new(8, 0.02, 0.2, 4, InitialLaw::delta(0.0));
        let init = sample_initial(&cfg, 1).unwrap();
        let (_, _, trace) = simulate_perturbed(&k, &cfg, init, &Perturbation::DtMismatch { factor: 4 }).unwrap();
        assert_eq!(trace.values.len(), 11);
        assert!(trace.values.iter().all(|v| *v < 1e-28), "{:?}", trace.values);
    }

    #[test]
    fn initial_shift_trace_starts_at_delta_squared() {
        let k = builtin_kernel("mean_field_ou", &[]).unwrap();
        let cfg = SolverConfig::new(16, 0.01, 0.1, 1, InitialLaw::normal(0.0, 1.0));
        let init = sample_initial(&cfg, 1).unwrap();
        let (_, _, trace) = simulate_perturbed(&k, &cfg, init, &Perturbation::InitialShift { delta: 1e-3 }).unwrap();
        assert!((trace.values[0] - 1e-6).abs() <= 1e-15);
    }
}
