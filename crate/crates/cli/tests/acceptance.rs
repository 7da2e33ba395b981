//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use mkvlab::kernels::{builtin_kernel, DeclaredRegularity, KernelSpec, ModulusFamily, YDependence};
use mkvlab::numeric::linear_fit;
use mkvlab::particle::{simulate, InitialLaw, SolverConfig};
use mkvlab::regularity::{dini_integral, ModulusTable, DEFAULT_DINI_R_MIN};
use mkvlab::scenario::{load_scenario, Scenario};
use mkvlab::uniqueness::{chaos_scaling, run_uniqueness_experiment, UniquenessVerdict};
use mkvlab::zvonkin::{
    freeze_coefficients, gradient_field, martingale_residual, run_zvonkin, solve_backward_pde, transform_record,
    FrozenCoefficients, GridField, PdeGrid,
};

type Criterion = (&'static str, fn() -> Outcome);
type DiniCase = (&'static str, fn(f64) -> f64, Option<f64>);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn scenario(name: &str) -> Scenario {
    load_scenario(&scenario_path(name)).expect("scenario loads")
}

fn ou_moment_oracle() -> Outcome {
    let k = builtin_kernel("mean_field_ou", &[]).unwrap();
    let target = 0.5 * (1.0 - (-2.0_f64).exp());
    let variances: Vec<f64> = (1..=16)
        .map(|seed| {
            let cfg = SolverConfig::new(2000, 1e-3, 1.0, seed, InitialLaw::delta(0.0));
            simulate(&k, &cfg).unwrap().final_variance()
        })
        .collect();
    let pooled = variances.iter().sum::<f64>() / variances.len() as f64;
    let err = (pooled - target).abs();
    outcome(err <= 0.03, format!("pooled variance {pooled:.5} vs {target:.5} (|err| {err:.5} <= 0.03)"))
}

fn dini_classifier() -> Outcome {
    let cases: [DiniCase; 3] = [
        ("r", |r| r, Some(1.0)),
        ("1/(1+ln(1/r))", |r| 1.0 / (1.0 + (1.0 / r).ln()), None),
        ("1/(1+ln(1/r))^2", |r| (1.0 + (1.0 / r).ln()).powi(-2), Some(1.0)),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, f, expected) in cases {
        let table = ModulusTable::from_fn(f, DEFAULT_DINI_R_MIN, 16);
        let res = dini_integral(&table, DEFAULT_DINI_R_MIN).unwrap();
        let ok = match expected {
            Some(v) => !res.divergent && (res.value - v).abs() <= 0.02,
            None => res.divergent,
        };
        pass &= ok;
        parts.push(if res.divergent { format!("{label}: divergent") } else { format!("{label}: {:.4}", res.value) });
    }
    outcome(pass, parts.join(", "))
}

fn uniform_times(t_end: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| t_end * k as f64 / steps as f64).collect()
}

fn pde_suite() -> Outcome {
    let grid = PdeGrid { half_width: 8.0, h: 0.05, interior_fraction: 0.5 };
    let solve = |times: Vec<f64>, g: &PdeGrid, f: &dyn Fn(f64, f64) -> (f64, f64)| {
        solve_backward_pde(&FrozenCoefficients::from_fn(times, g, f).unwrap()).unwrap()
    };
    let e_identity = solve(uniform_times(1.0, 100), &grid, &|_, _| (0.0, 1.0)).interior_error(|_, x| x);
    let b0 = 0.7;
    let e_shift = solve(uniform_times(1.0, 100), &grid, &|_, _| (b0, 1.0)).interior_error(|t, x| x + b0 * (1.0 - t));

    let t_end = 0.5;
    let wide = PdeGrid { half_width: 10.0, h: 0.1, interior_fraction: 0.5 };
    let (dts, errs): (Vec<f64>, Vec<f64>) = [25usize, 50, 100, 200, 400]
        .iter()
        .map(|&m| {
            let u = solve(uniform_times(t_end, m), &wide, &|_, x| (-x, 1.0));
            (t_end / m as f64, u.interior_error(|t, x| x * (-(t_end - t)).exp()))
        })
        .unzip();
    let dt_slope = loglog_slope(&dts, &errs);

    // spatial order by self-convergence on a nonlinear drift; the closed forms
    // are linear in x and carry no spatial error
    let hs = [0.2, 0.1, 0.05, 0.025, 0.0125];
    let fields: Vec<GridField> = hs
        .iter()
        .map(|&h| {
            let g = PdeGrid { half_width: 6.4, h, interior_fraction: 0.5 };
            solve(uniform_times(t_end, 250), &g, &|_, x| (x.sin(), 1.0))
        })
        .collect();
    let diffs: Vec<f64> = fields
        .windows(2)
        .map(|p| {
            let (coarse, fine) = (&p[0], &p[1]);
            let mut worst = 0.0_f64;
            for k in 0..coarse.times.len() {
                for j in coarse.interior() {
                    worst = worst.max((coarse.at(k, j) - fine.at(k, 2 * j)).abs());
                }
            }
            worst
        })
        .collect();
    let h_slope = loglog_slope(&hs[..hs.len() - 1], &diffs);
    let pass = e_identity <= 1e-10 && e_shift <= 1e-8 && (dt_slope - 1.0).abs() <= 0.3 && (h_slope - 2.0).abs() <= 0.3;
    outcome(
        pass,
        format!("u=x err {e_identity:.1e}, u=x+b0(T-t) err {e_shift:.1e}, dt slope {dt_slope:.3}, h slope {h_slope:.3}"),
    )
}

fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).map(|(s, _)| s).unwrap_or(f64::NAN)
}

fn gradient_smallness() -> Outcome {
    let ladder = [0.05, 0.1, 0.2, 0.4];
    let grid = PdeGrid::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["zero_drift_unit_diffusion", "mean_field_ou"] {
        let k = builtin_kernel(name, &[]).unwrap();
        let devs: Vec<f64> = ladder
            .iter()
            .map(|&t| {
                let cfg = SolverConfig::new(2000, 1e-3, t, 5, InitialLaw::normal(0.0, 0.5)).with_paths();
                let rec = simulate(&k, &cfg).unwrap();
                let field = solve_backward_pde(&freeze_coefficients(&rec, &k, &grid).unwrap()).unwrap();
                gradient_field(&field).sup_deviation
            })
            .collect();
        let monotone = devs.windows(2).all(|w| w[1] >= w[0] - 1e-12);
        pass &= monotone && devs[0] <= 0.05;
        parts.push(format!("{name} {:?}", devs.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>()));
    }
    outcome(pass, parts.join("; "))
}

fn norm_equivalence() -> Outcome {
    let s = scenario("ou_zvonkin.json");
    let run = run_zvonkin(&s.kernel().unwrap(), &s.solver, &s.experiment().perturbation, &s.pde()).unwrap();
    let ne = &run.report.norm_equivalence;
    let c_th = ne.theoretical.unwrap_or(f64::NAN);
    let pass = !ne.equivalence_failed && ne.measured >= 1.0 && ne.measured <= c_th * 1.01 && ne.compared_pairs > 0;
    outcome(pass, format!("C = {:.6}, C_th = {c_th:.6}, pairs {}, T = {}", ne.measured, ne.compared_pairs, s.solver.horizon))
}

fn constant_drift(b0: f64) -> KernelSpec {
    KernelSpec::custom(
        format!("constant_drift({b0})"),
        1,
        1,
        Arc::new(move |_, _, _, out: &mut [f64]| out[0] = b0),
        YDependence::None,
        Arc::new(|_, _, _, out: &mut [f64]| out[0] = 1.0),
        YDependence::None,
        DeclaredRegularity {
            drift_bound: b0.abs(),
            diffusion_bound: 1.0,
            lipschitz_y: 0.0,
            lipschitz_x_sigma: 0.0,
            drift_modulus: ModulusFamily::Linear { slope: 0.0 },
        },
    )
    .unwrap()
}

fn martingale_residuals() -> Outcome {
    let (n, dt, t_end, b0) = (10_000, 1e-3, 0.1, 5.0);
    let grid = PdeGrid::default();
    let cfg = SolverConfig::new(n, dt, t_end, 21, InitialLaw::delta(0.0)).with_paths();

    let zero = builtin_kernel("zero_drift_unit_diffusion", &[]).unwrap();
    let rec = simulate(&zero, &cfg).unwrap();
    let identity = GridField::from_fn(rec.times.clone(), &grid, |_, x| x).unwrap();
    let brownian = martingale_residual(&transform_record(&identity, &rec).unwrap(), dt).max_standardized;

    let drifted = constant_drift(b0);
    let rec = simulate(&drifted, &cfg).unwrap();
    let solved = solve_backward_pde(&freeze_coefficients(&rec, &drifted, &grid).unwrap()).unwrap();
    let cancelled = martingale_residual(&transform_record(&solved, &rec).unwrap(), dt).max_standardized;
    let wrong = martingale_residual(&transform_record(&identity, &rec).unwrap(), dt).max_standardized;

    let pass = brownian <= 4.0 && cancelled <= 4.0 && wrong >= 10.0;
    outcome(pass, format!("b=0,u=x {brownian:.3}; b=b0,u solved {cancelled:.3}; b=b0,u=x {wrong:.3} (b0={b0}, N={n})"))
}

fn gronwall_suite() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();

    let s = scenario("ou_gronwall.json");
    let exp = s.experiment();
    let r = run_uniqueness_experiment(&s.kernel().unwrap(), &s.solver, &exp.perturbation, &exp.dt_ladder, &exp.seeds, &s.harness_options())
        .unwrap();
    let delta = exp.perturbation.size();
    let terminal_ok = r.dt_ladder[0].terminal_trace <= delta * delta * (r.gronwall_c * s.solver.horizon).exp() * 1.05;
    let ok = r.bound_checked && r.bound_violations == 0 && terminal_ok && r.verdict == UniquenessVerdict::ConsistentWithUniqueness;
    pass &= ok;
    parts.push(format!("shift: C {:.3e}, violations {} over {} seeds", r.gronwall_c, r.bound_violations, exp.seeds.len()));

    let s = scenario("ou_dt_ladder.json");
    let exp = s.experiment();
    let r = run_uniqueness_experiment(&s.kernel().unwrap(), &s.solver, &exp.perturbation, &exp.dt_ladder, &exp.seeds, &s.harness_options())
        .unwrap();
    pass &= r.ladder_inversions <= 1 && r.dt_ladder.len() == 5;
    let terms: Vec<String> = r.dt_ladder.iter().map(|x| format!("{:.2e}", x.terminal_trace)).collect();
    parts.push(format!("dt-mismatch ladder [{}] inversions {}", terms.join(" "), r.ladder_inversions));

    let s = scenario("degenerate_control.json");
    let exp = s.experiment();
    let r = run_uniqueness_experiment(&s.kernel().unwrap(), &s.solver, &exp.perturbation, &exp.dt_ladder, &exp.seeds, &s.harness_options())
        .unwrap();
    let ratio = r.contraction_ratio.unwrap_or(0.0);
    pass &= r.verdict == UniquenessVerdict::Refutes && ratio > 1.0;
    parts.push(format!("negative control: {} violations, finest-rung growth x{ratio:.3e}", r.bound_violations));
    outcome(pass, parts.join("; "))
}

fn chaos() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["ou_chaos.json", "brownian_chaos.json"] {
        let s = scenario(name);
        let exp = s.experiment();
        let r = chaos_scaling(&s.kernel().unwrap(), &s.solver, &exp.n_ladder, &exp.seeds).unwrap();
        pass &= (r.slope + 0.5).abs() <= 0.15 && r.n_ladder.first() == Some(&50) && r.n_ladder.last() == Some(&3200);
        parts.push(format!("{} slope {:.3}", r.kernel, r.slope));
    }
    outcome(pass, parts.join(", "))
}

fn cli_payloads(sub: &str, scenario: &str, threads: usize, out: &Path) -> Vec<(String, Vec<u8>)> {
    let status = Command::new(env!("CARGO_BIN_EXE_mkvlab"))
        .args([sub, "--scenario"])
        .arg(scenario_path(scenario))
        .arg("--out")
        .arg(out)
        .args(["--threads", &threads.to_string()])
        .output()
        .expect("mkvlab runs");
    assert!(status.status.code().is_some_and(|c| c == 0 || c == 2), "{}", String::from_utf8_lossy(&status.stderr));
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().is_some_and(|f| f != "manifest.json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let runs = [
        ("check", "degenerate_check.json"),
        ("simulate", "ou_moments.json"),
        ("couple", "ou_couple_identical.json"),
        ("zvonkin", "ou_zvonkin.json"),
        ("uniqueness", "ou_blocks.json"),
        ("uniqueness", "ou_dt_ladder.json"),
        ("chaos", "brownian_chaos.json"),
    ];
    let tmp = tempfile::tempdir().unwrap();
    let mut pass = true;
    let mut mismatched = Vec::new();
    let mut files = 0;
    for (i, (sub, sc)) in runs.iter().enumerate() {
        let base = cli_payloads(sub, sc, 1, &tmp.path().join(format!("{i}-t1")));
        for threads in [3, 8] {
            let other = cli_payloads(sub, sc, threads, &tmp.path().join(format!("{i}-t{threads}")));
            if other != base || base.is_empty() {
                pass = false;
                mismatched.push(format!("{sub} {sc} threads={threads}"));
            }
        }
        files += base.len();
    }
    let detail = if mismatched.is_empty() {
        format!("{} runs x threads {{1,3,8}}: {files} payload files identical", runs.len())
    } else {
        format!("differs: {}", mismatched.join(", "))
    };
    outcome(pass, detail)
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("mean-field OU moment oracle", ou_moment_oracle),
        ("Dini classifier", dini_classifier),
        ("PDE analytic suite", pde_suite),
        ("gradient smallness", gradient_smallness),
        ("norm equivalence", norm_equivalence),
        ("martingale residual", martingale_residuals),
        ("Gronwall / uniqueness suite", gronwall_suite),
        ("chaos scaling", chaos),
        ("determinism across thread counts", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {} {}: {} | {} [{:.1}s]",
            i + 1,
            if result.pass { "PASS" } else { "FAIL" },
            name,
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
