use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use mkvlab::io::{self, Manifest};
use mkvlab::particle::{sample_initial, simulate, simulate_perturbed};
use mkvlab::regularity::check_hypotheses;
use mkvlab::scenario::{load_scenario, Scenario};
use mkvlab::uniqueness::{chaos_scaling, interval_iteration, run_uniqueness_experiment};
use mkvlab::zvonkin::run_zvonkin;
use mkvlab::Error;

/// McKean–Vlasov particle laboratory.
#[derive(Parser)]
#[command(name = "mkvlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Probe the regularity hypotheses; exit 2 if any is refuted.
    Check(RunArgs),
    /// Simulate the particle system and write per-step moments.
    Simulate(RunArgs),
    /// Simulate a coupled pair under the experiment perturbation.
    Couple(RunArgs),
    /// Solve the frozen backward PDE and run the transform checks (d = 1).
    Zvonkin(RunArgs),
    /// Coupled-solution coalescence experiment with Gronwall fits.
    Uniqueness(RunArgs),
    /// Variance error against particle count.
    Chaos(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Worker threads.
    #[arg(long, env = "MKVLAB_THREADS")]
    threads: Option<usize>,
    /// Replace the scenario seed.
    #[arg(long)]
    seed_override: Option<u64>,
}

/// Outcome of a subcommand that ran to completion.
struct Finished {
    outputs: Vec<String>,
    refuted: bool,
    summary: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Check(a) => ("check", a),
        Command::Simulate(a) => ("simulate", a),
        Command::Couple(a) => ("couple", a),
        Command::Zvonkin(a) => ("zvonkin", a),
        Command::Uniqueness(a) => ("uniqueness", a),
        Command::Chaos(a) => ("chaos", a),
    };
    match run(name, args) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("mkvlab {name}: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if matches!(e, Error::HypothesesRefuted(_)) {
        2
    } else {
        1
    }
}

fn apply_seed_override(mut scenario: Scenario, seed: Option<u64>) -> Scenario {
    let Some(seed) = seed else { return scenario };
    if let Some(exp) = scenario.experiment.as_mut() {
        for (i, s) in exp.seeds.iter_mut().enumerate() {
            *s = seed.wrapping_add(i as u64);
        }
    }
    scenario.with_seed(seed)
}

fn run(name: &str, args: &RunArgs) -> Result<u8, Error> {
    let scenario = apply_seed_override(load_scenario(&args.scenario)?, args.seed_override);
    io::prepare_out_dir(&args.out, args.force)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let threads = pool.current_num_threads();

    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let result = pool.install(|| dispatch(name, &scenario, &args.out));
    let (code, error, outputs) = match &result {
        Ok(f) => (if f.refuted { 2 } else { 0 }, None, f.outputs.clone()),
        Err(e) => (i32::from(exit_code(e)), Some(e.to_string()), Vec::new()),
    };
    let manifest = Manifest {
        tool: "mkvlab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: name.into(),
        scenario_path: args.scenario.display().to_string(),
        scenario_hash: scenario.hash(),
        scenario: serde_json::from_str(&scenario.canonical_json())?,
        seed: scenario.solver.seed,
        threads,
        started_unix_seconds: started,
        wall_time_seconds: clock.elapsed().as_secs_f64(),
        exit_code: code,
        error,
        outputs,
    };
    io::write_json(&args.out.join("manifest.json"), &manifest)?;
    let finished = result?;
    println!("{}", finished.summary);
    Ok(code as u8)
}

fn dispatch(name: &str, scenario: &Scenario, out: &Path) -> Result<Finished, Error> {
    let spec = scenario.kernel()?;
    let solver = &scenario.solver;
    let exp = scenario.experiment();
    let done = |outputs: &[&str], refuted: bool, summary: String| Finished {
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        refuted,
        summary,
    };
    match name {
        "check" => {
            let initial = sample_initial(solver, scenario.d)?.empirical_measure()?;
            let report = check_hypotheses(&spec, &initial, &scenario.probe(), solver.seed);
            io::write_json(&out.join("report.json"), &report)?;
            let refuted = report.refuted();
            let summary = if refuted.is_empty() {
                format!("{}: hypotheses not refuted", spec.name)
            } else {
                format!("{}: refuted condition(s) {}", spec.name, refuted.join(", "))
            };
            Ok(done(&["report.json"], !report.overall(), summary))
        }
        "simulate" => {
            let record = simulate(&spec, solver)?;
            io::write_trajectory_csv(&out.join("trajectory.csv"), &record)?;
            let mut outputs = vec!["trajectory.csv"];
            if record.paths.is_some() {
                io::write_paths_bin(&out.join("paths.bin"), &out.join("paths.json"), &record)?;
                outputs.extend(["paths.bin", "paths.json"]);
            }
            let summary = format!("{}: {} steps, terminal variance {:.6}", spec.name, record.steps(), record.final_variance());
            Ok(done(&outputs, false, summary))
        }
        "couple" => {
            let initial = sample_initial(solver, scenario.d)?;
            let (a, b, trace) = simulate_perturbed(&spec, solver, initial, &exp.perturbation)?;
            io::write_trajectory_csv(&out.join("trajectory_a.csv"), &a)?;
            io::write_trajectory_csv(&out.join("trajectory_b.csv"), &b)?;
            io::write_trace_csv(&out.join("difference.csv"), &trace)?;
            let summary = format!("{}: terminal mean-square difference {:e}", spec.name, trace.terminal());
            Ok(done(&["trajectory_a.csv", "trajectory_b.csv", "difference.csv"], false, summary))
        }
        "zvonkin" => {
            let run = run_zvonkin(&spec, solver, &exp.perturbation, &scenario.pde())?;
            io::write_json(&out.join("zvonkin.json"), &run.report)?;
            io::write_field_csv(&out.join("field.csv"), &run.field, &run.gradient)?;
            let r = &run.report;
            let summary = format!(
                "{}: sup|u_x - 1| = {:.3e}, C = {:.6}, residual = {:.3}",
                spec.name, r.gradient.sup_deviation, r.norm_equivalence.measured, r.martingale.max_standardized
            );
            Ok(done(&["zvonkin.json", "field.csv"], false, summary))
        }
        "uniqueness" => {
            let opts = scenario.harness_options();
            if let Some(t_block) = exp.t_block {
                let report = interval_iteration(&spec, solver, &exp.perturbation, t_block, exp.n_blocks, &exp.seeds, &opts)?;
                io::write_json(&out.join("uniqueness.json"), &report)?;
                let mut trace = report.blocks[0].mean_trace.clone();
                for block in &report.blocks[1..] {
                    trace.times.extend_from_slice(&block.mean_trace.times[1..]);
                    trace.values.extend_from_slice(&block.mean_trace.values[1..]);
                }
                io::write_trace_csv(&out.join("difference.csv"), &trace)?;
                let verdicts: Vec<String> =
                    report.blocks.iter().map(|b| serde_json::to_string(&b.verdict).unwrap_or_default()).collect();
                let summary = format!("{}: block verdicts {}", spec.name, verdicts.join(" "));
                Ok(done(&["uniqueness.json", "difference.csv"], false, summary))
            } else {
                let report = run_uniqueness_experiment(&spec, solver, &exp.perturbation, &exp.dt_ladder, &exp.seeds, &opts)?;
                io::write_json(&out.join("uniqueness.json"), &report)?;
                io::write_trace_csv(&out.join("difference.csv"), &report.mean_trace)?;
                let summary = format!(
                    "{}: C = {:.4}, violations = {}, verdict {}",
                    spec.name,
                    report.gronwall_c,
                    report.bound_violations,
                    serde_json::to_string(&report.verdict).unwrap_or_default()
                );
                Ok(done(&["uniqueness.json", "difference.csv"], false, summary))
            }
        }
        "chaos" => {
            let report = chaos_scaling(&spec, solver, &exp.n_ladder, &exp.seeds)?;
            io::write_json(&out.join("chaos.json"), &report)?;
            let summary = format!("{}: log-log slope {:.3}", spec.name, report.slope);
            Ok(done(&["chaos.json"], false, summary))
        }
        other => unreachable!("unknown subcommand {other}"),
    }
}
