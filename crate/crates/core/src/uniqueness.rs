//! Coupled-solution experiments: coalescence under shared noise, Gronwall
//! fits, interval iteration, and a propagation-of-chaos rate check.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::numeric::{compensated_sum, linear_fit};
use crate::particle::{
    sample_initial, simulate, simulate_coupled_run, CoupledRun, DifferenceTrace, Ensemble, InitialLaw, Perturbation,
    SolverConfig,
};
use crate::regularity::{check_hypotheses, ProbePlan};
use crate::rng::derive_seed;
use crate::zvonkin::{freeze_coefficients, gradient_field, solve_backward_pde, PdeGrid};

/// Trace values at or below this are left out of the log-linear fit.
pub const FIT_FLOOR: f64 = 1e-20;
/// Default multiplicative slack on the Gronwall bound.
pub const DEFAULT_BOUND_SLACK: f64 = 0.05;
/// Relative tolerance under which two ladder terminals count as tied.
pub const LADDER_TIE_TOLERANCE: f64 = 1e-9;
/// Inversions tolerated along a dt-ladder.
pub const ALLOWED_INVERSIONS: usize = 1;
/// Blocks must keep `sup |u_x − 1|` below this.
pub const GRADIENT_SCREEN_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GronwallFit {
    pub c: f64,
    pub zero_trace: bool,
    pub points: usize,
}

/// Least-squares slope of `ln trace` against `t` over values above
/// [`FIT_FLOOR`], clipped at 0.
pub fn gronwall_fit(trace: &DifferenceTrace) -> GronwallFit {
    let (ts, ls): (Vec<f64>, Vec<f64>) = trace
        .times
        .iter()
        .zip(&trace.values)
        .filter(|(_, v)| **v > FIT_FLOOR)
        .map(|(t, v)| (*t, v.ln()))
        .unzip();
    let zero_trace = trace.values.iter().all(|v| *v == 0.0);
    let c = linear_fit(&ts, &ls).map(|(slope, _)| slope.max(0.0)).unwrap_or(0.0);
    GronwallFit { c, zero_trace, points: ts.len() }
}

/// Steps where `trace(t) > trace(t₀)·e^{C(t−t₀)}·(1 + slack)`.
pub fn count_bound_violations(trace: &DifferenceTrace, c: f64, slack: f64) -> usize {
    let t0 = trace.times[0];
    let v0 = trace.values[0];
    trace
        .times
        .iter()
        .zip(&trace.values)
        .filter(|(t, v)| **v > v0 * (c * (**t - t0)).exp() * (1.0 + slack))
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UniquenessVerdict {
    ConsistentWithUniqueness,
    Refutes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRung {
    pub dt: f64,
    /// Terminal trace averaged over seeds.
    pub terminal_trace: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub kernel: String,
    pub perturbation: String,
    pub perturbation_size: f64,
    /// Largest per-run fitted constant.
    pub gronwall_c: f64,
    pub zero_trace: bool,
    pub bound_violations: usize,
    /// False when every run starts from a zero discrepancy under a
    /// discretization perturbation; the bound is then vacuous.
    pub bound_checked: bool,
    pub bound_slack: f64,
    /// Sorted by decreasing dt.
    pub dt_ladder: Vec<LadderRung>,
    pub ladder_inversions: usize,
    /// Finest-rung terminal trace over its initial value, when that is positive.
    pub contraction_ratio: Option<f64>,
    pub verdict: UniquenessVerdict,
    pub refuted_hypotheses: Vec<String>,
    pub hypotheses_overridden: bool,
    /// Seed-averaged trace on the first (coarsest) rung.
    pub mean_trace: DifferenceTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessOptions {
    pub override_hypotheses: bool,
    pub bound_slack: f64,
    pub probe: ProbePlan,
    pub pde: PdeGrid,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        Self { override_hypotheses: false, bound_slack: DEFAULT_BOUND_SLACK, probe: ProbePlan::default(), pde: PdeGrid::default() }
    }
}

impl HarnessOptions {
    pub fn overriding(mut self) -> Self {
        self.override_hypotheses = true;
        self
    }
}

/// Runs the hypothesis checker on the initial law and fails unless it passes
/// or the caller overrides. Returns the refuted condition names.
fn gate(spec: &KernelSpec, config: &SolverConfig, opts: &HarnessOptions) -> Result<Vec<String>> {
    let initial = sample_initial(config, spec.d)?.empirical_measure()?;
    let report = check_hypotheses(spec, &initial, &opts.probe, config.seed);
    let refuted: Vec<String> = report.refuted().into_iter().map(str::to_string).collect();
    if !refuted.is_empty() && !opts.override_hypotheses {
        return Err(Error::HypothesesRefuted(refuted.join(", ")));
    }
    Ok(refuted)
}

fn with_seed(config: &SolverConfig, seed: u64, dt: f64) -> SolverConfig {
    let mut c = config.clone();
    c.seed = seed;
    c.dt = dt;
    c.record_paths = false;
    c
}

fn mean_traces(traces: &[&DifferenceTrace]) -> DifferenceTrace {
    let first = traces[0];
    let n = traces.len() as f64;
    let values = (0..first.values.len())
        .map(|k| compensated_sum(traces.iter().map(|t| t.values[k])) / n)
        .collect();
    DifferenceTrace { times: first.times.clone(), values, perturbation: first.perturbation.clone(), size: first.size }
}

fn count_inversions(terminals: &[f64]) -> usize {
    terminals
        .windows(2)
        .filter(|w| w[1] > w[0] * (1.0 + LADDER_TIE_TOLERANCE) && w[1] - w[0] > f64::MIN_POSITIVE)
        .count()
}

/// Aggregates per-rung, per-seed traces (`traces[rung][seed]`, rungs in
/// decreasing dt) into a report.
fn assemble_report(
    spec: &KernelSpec,
    perturbation: &Perturbation,
    rungs: &[f64],
    traces: &[Vec<DifferenceTrace>],
    refuted: Vec<String>,
    opts: &HarnessOptions,
) -> UniquenessReport {
    let mut gronwall_c = 0.0_f64;
    let mut violations = 0;
    let mut checked = false;
    let mut zero_trace = true;
    for trace in traces.iter().flatten() {
        let fit = gronwall_fit(trace);
        zero_trace &= fit.zero_trace;
        gronwall_c = gronwall_c.max(fit.c);
        let vacuous = trace.values[0] == 0.0 && !matches!(perturbation, Perturbation::None);
        if !vacuous {
            checked = true;
            violations += count_bound_violations(trace, fit.c, opts.bound_slack);
        }
    }
    let dt_ladder: Vec<LadderRung> = rungs
        .iter()
        .zip(traces)
        .map(|(&dt, runs)| LadderRung {
            dt,
            terminal_trace: compensated_sum(runs.iter().map(DifferenceTrace::terminal)) / runs.len() as f64,
            seeds: runs.len(),
        })
        .collect();
    let terminals: Vec<f64> = dt_ladder.iter().map(|r| r.terminal_trace).collect();
    let ladder_inversions = count_inversions(&terminals);
    let finest = traces.last().expect("nonempty ladder");
    let start = compensated_sum(finest.iter().map(|t| t.values[0])) / finest.len() as f64;
    let contraction_ratio = (start > 0.0).then(|| terminals.last().copied().unwrap_or(0.0) / start);
    let verdict = if violations == 0 && ladder_inversions <= ALLOWED_INVERSIONS {
        UniquenessVerdict::ConsistentWithUniqueness
    } else {
        UniquenessVerdict::Refutes
    };
    let refs: Vec<&DifferenceTrace> = traces[0].iter().collect();
    UniquenessReport {
        kernel: spec.name.clone(),
        perturbation: perturbation.kind().to_string(),
        perturbation_size: perturbation.size(),
        gronwall_c,
        zero_trace,
        bound_violations: violations,
        bound_checked: checked,
        bound_slack: opts.bound_slack,
        dt_ladder,
        ladder_inversions,
        contraction_ratio,
        verdict,
        hypotheses_overridden: opts.override_hypotheses && !refuted.is_empty(),
        refuted_hypotheses: refuted,
        mean_trace: mean_traces(&refs),
    }
}

fn sorted_ladder(config: &SolverConfig, ladder: &[f64]) -> Vec<f64> {
    let mut rungs = if ladder.is_empty() { vec![config.dt] } else { ladder.to_vec() };
    rungs.sort_by(|a, b| b.total_cmp(a));
    rungs.dedup();
    rungs
}

fn seeds_or_default(config: &SolverConfig, seeds: &[u64]) -> Vec<u64> {
    if seeds.is_empty() {
        vec![config.seed]
    } else {
        seeds.to_vec()
    }
}

fn coupled_job(spec: &KernelSpec, config: &SolverConfig, perturbation: &Perturbation) -> Result<CoupledRun> {
    let initial = sample_initial(config, spec.d)?;
    let (spec_b, config_b, init_b) = perturbation.apply(spec, config, &initial)?;
    let mut run = simulate_coupled_run(spec, config, initial, &spec_b, &config_b, init_b)?;
    run.trace.perturbation = perturbation.kind().to_string();
    run.trace.size = perturbation.size();
    Ok(run)
}

/// Runs one coupled pair per (dt rung, seed) and aggregates.
///
/// An empty `ladder` means the configured dt; empty `seeds` means the
/// configured seed.
pub fn run_uniqueness_experiment(
    spec: &KernelSpec,
    config: &SolverConfig,
    perturbation: &Perturbation,
    ladder: &[f64],
    seeds: &[u64],
    opts: &HarnessOptions,
) -> Result<UniquenessReport> {
    let refuted = gate(spec, config, opts)?;
    let rungs = sorted_ladder(config, ladder);
    let seeds = seeds_or_default(config, seeds);
    let jobs: Vec<(usize, u64)> = (0..rungs.len()).flat_map(|r| seeds.iter().map(move |s| (r, *s))).collect();
    let traces: Vec<DifferenceTrace> = jobs
        .par_iter()
        .map(|&(r, seed)| coupled_job(spec, &with_seed(config, seed, rungs[r]), perturbation).map(|run| run.trace))
        .collect::<Result<_>>()?;
    let grouped: Vec<Vec<DifferenceTrace>> = traces.chunks(seeds.len()).map(<[_]>::to_vec).collect();
    Ok(assemble_report(spec, perturbation, &rungs, &grouped, refuted, opts))
}

/// `sup |u_x − 1|` for the frozen flow of one simulated block (d = 1 only).
pub fn gradient_screen(spec: &KernelSpec, config: &SolverConfig, grid: &PdeGrid) -> Result<f64> {
    let mut cfg = config.clone();
    cfg.record_paths = true;
    let record = simulate(spec, &cfg)?;
    let frozen = freeze_coefficients(&record, spec, grid)?;
    let field = solve_backward_pde(&frozen)?;
    Ok(gradient_field(&field).sup_deviation)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub t_block: f64,
    /// `sup |u_x − 1|` over the first block, when the screen ran.
    pub gradient_screen: Option<f64>,
    pub blocks: Vec<UniquenessReport>,
}

/// Restarts the coupled experiment over `[bT, (b+1)T]`, each block from the
/// previous block's terminal pair and with fresh noise. Block 0 uses the
/// configured seeds unchanged, so one block equals
/// [`run_uniqueness_experiment`] on the configured dt.
pub fn interval_iteration(
    spec: &KernelSpec,
    config: &SolverConfig,
    perturbation: &Perturbation,
    t_block: f64,
    n_blocks: usize,
    seeds: &[u64],
    opts: &HarnessOptions,
) -> Result<IntervalReport> {
    if n_blocks == 0 {
        return Err(Error::InvalidParameter("n_blocks must be positive".into()));
    }
    let mut block_config = config.clone();
    block_config.horizon = t_block;
    block_config.steps()?;
    let refuted = gate(spec, &block_config, opts)?;
    let gradient_screen = if spec.d == 1 && refuted.is_empty() {
        let dev = gradient_screen(spec, &block_config, &opts.pde)?;
        if !(dev < GRADIENT_SCREEN_LIMIT) && !opts.override_hypotheses {
            return Err(Error::HypothesesRefuted(format!(
                "block length {t_block} fails the gradient screen: sup|u_x - 1| = {dev}"
            )));
        }
        Some(dev)
    } else {
        None
    };
    let seeds = seeds_or_default(config, seeds);
    let rungs = [block_config.dt];
    let mut states: Vec<Option<(KernelSpec, SolverConfig, Ensemble, Ensemble)>> = vec![None; seeds.len()];
    let mut blocks = Vec::with_capacity(n_blocks);
    for b in 0..n_blocks {
        let runs: Vec<(DifferenceTrace, (KernelSpec, SolverConfig, Ensemble, Ensemble))> = seeds
            .par_iter()
            .zip(states.par_iter())
            .map(|(&seed, carried)| -> Result<_> {
                let block_seed = if b == 0 { seed } else { derive_seed(seed, b as u64, 0) };
                let cfg_a = with_seed(&block_config, block_seed, block_config.dt);
                let (spec_b, cfg_b, init_a, init_b) = match carried {
                    None => {
                        let initial = sample_initial(&cfg_a, spec.d)?;
                        let (spec_b, cfg_b, init_b) = perturbation.apply(spec, &cfg_a, &initial)?;
                        (spec_b, cfg_b, initial, init_b)
                    }
                    Some((spec_b, cfg_b, a, bb)) => {
                        let origin = b as f64 * t_block;
                        let mut cfg_b = cfg_b.clone();
                        cfg_b.seed = block_seed;
                        (spec_b.clone(), cfg_b, a.restarted_at(origin), bb.restarted_at(origin))
                    }
                };
                let mut run = simulate_coupled_run(spec, &cfg_a, init_a, &spec_b, &cfg_b, init_b)?;
                run.trace.perturbation = perturbation.kind().to_string();
                run.trace.size = perturbation.size();
                Ok((run.trace, (spec_b, cfg_b, run.final_a, run.final_b)))
            })
            .collect::<Result<_>>()?;
        let (traces, next): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
        states = next.into_iter().map(Some).collect();
        blocks.push(assemble_report(spec, perturbation, &rungs, &[traces], refuted.clone(), opts));
    }
    Ok(IntervalReport { t_block, gradient_screen, blocks })
}

/// Closed-form per-coordinate variance `V(t)` of the limiting law.
pub type VarianceOracle = fn(f64, f64) -> f64;

fn ou_variance(v0: f64, t: f64) -> f64 {
    0.5 + (v0 - 0.5) * (-2.0 * t).exp()
}

fn brownian_variance(v0: f64, t: f64) -> f64 {
    v0 + t
}

/// Variance oracle registered for a kernel, if any.
pub fn variance_oracle(spec: &KernelSpec) -> Option<VarianceOracle> {
    match spec.name.as_str() {
        "mean_field_ou" => Some(ou_variance),
        "zero_drift_unit_diffusion" => Some(brownian_variance),
        _ => None,
    }
}

/// Variance of one coordinate under the initial law.
pub fn initial_variance(law: &InitialLaw) -> Result<f64> {
    match law.sampler.as_str() {
        "delta" => Ok(0.0),
        "normal" => Ok(law.params.get(1).copied().unwrap_or(1.0).powi(2)),
        "uniform_box" => {
            let low = law.params.first().copied().unwrap_or(-1.0);
            let high = law.params.get(1).copied().unwrap_or(1.0);
            Ok((high - low).powi(2) / 12.0)
        }
        other => Err(Error::UnknownSampler(other.to_string())),
    }
}

pub const DEFAULT_N_LADDER: [usize; 7] = [50, 100, 200, 400, 800, 1600, 3200];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosReport {
    pub kernel: String,
    pub horizon: f64,
    pub oracle_variance: f64,
    pub n_ladder: Vec<usize>,
    /// Mean over seeds of `|V̂_N(T) − V(T)|`.
    pub errors: Vec<f64>,
    pub seeds: usize,
    pub slope: f64,
    pub intercept: f64,
}

/// Regresses `ln(mean |V̂_N(T) − V(T)|)` on `ln N`.
pub fn chaos_scaling(spec: &KernelSpec, config: &SolverConfig, n_ladder: &[usize], seeds: &[u64]) -> Result<ChaosReport> {
    if n_ladder.len() < 2 {
        return Err(Error::LadderTooShort(n_ladder.len()));
    }
    let oracle = variance_oracle(spec).ok_or_else(|| Error::NoOracle(spec.name.clone()))?;
    if spec.d != 1 {
        return Err(Error::NoOracle(format!("{} in d = {}", spec.name, spec.d)));
    }
    let v0 = initial_variance(&config.initial_law)?;
    let target = oracle(v0, config.horizon);
    let seeds = seeds_or_default(config, seeds);
    let jobs: Vec<(usize, usize)> = (0..n_ladder.len()).flat_map(|r| (0..seeds.len()).map(move |s| (r, s))).collect();
    let deviations: Vec<f64> = jobs
        .par_iter()
        .map(|&(r, s)| -> Result<f64> {
            let mut cfg = with_seed(config, derive_seed(seeds[s], r as u64, n_ladder[r] as u64), config.dt);
            cfg.n_particles = n_ladder[r];
            Ok((simulate(spec, &cfg)?.final_variance() - target).abs())
        })
        .collect::<Result<_>>()?;
    let errors: Vec<f64> =
        deviations.chunks(seeds.len()).map(|c| compensated_sum(c.iter().copied()) / c.len() as f64).collect();
    let xs: Vec<f64> = n_ladder.iter().map(|n| (*n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (slope, intercept) =
        linear_fit(&xs, &ys).ok_or_else(|| Error::InvalidParameter("degenerate particle-count ladder".into()))?;
    Ok(ChaosReport {
        kernel: spec.name.clone(),
        horizon: config.horizon,
        oracle_variance: target,
        n_ladder: n_ladder.to_vec(),
        errors,
        seeds: seeds.len(),
        slope,
        intercept,
    })
}
