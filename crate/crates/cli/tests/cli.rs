use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn write_scenario(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn mkvlab(sub: &str, scenario: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mkvlab"))
        .arg(sub)
        .arg("--scenario")
        .arg(scenario)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

const SMALL_OU: &str = r#"{"kernel": {"name": "mean_field_ou"},
    "solver": {"n_particles": 50, "dt": 0.01, "horizon": 0.5, "seed": 1,
               "initial_law": {"sampler": "normal", "params": [0, 1]}}}"#;

#[test]
fn check_refutes_degenerate_diffusion() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(
        dir.path(),
        "s.json",
        r#"{"kernel": {"name": "degenerate_diffusion"}, "solver": {"n_particles": 10, "dt": 0.1, "horizon": 1, "seed": 1},
            "probe": {"probes": 200}}"#,
    );
    let out = dir.path().join("out");
    let o = mkvlab("check", &s, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    let iii = report["conditions"].as_array().unwrap().iter().find(|c| c["condition"] == "iii").unwrap();
    assert_eq!(iii["verdict"], "refuted");
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["exit_code"], 2);
}

#[test]
fn simulate_writes_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), "s.json", SMALL_OU);
    let out = dir.path().join("out");
    let o = mkvlab("simulate", &s, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(text.lines().count() - 1, 51);
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["scenario_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn simulate_with_paths_writes_binary() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), "s.json", &SMALL_OU.replace("\"seed\": 1,", "\"seed\": 1, \"record_paths\": true,"));
    let out = dir.path().join("out");
    assert!(mkvlab("simulate", &s, &out, &[]).status.success());
    assert_eq!(std::fs::metadata(out.join("paths.bin")).unwrap().len(), 51 * 50 * 8);
}

#[test]
fn couple_identical_gives_zero_difference() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), "s.json", SMALL_OU);
    let out = dir.path().join("out");
    assert!(mkvlab("couple", &s, &out, &[]).status.success());
    let text = std::fs::read_to_string(out.join("difference.csv")).unwrap();
    for line in text.lines().skip(1) {
        assert_eq!(line.split(',').nth(1).unwrap().parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn existing_output_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), "s.json", SMALL_OU);
    let out = dir.path().join("out");
    assert!(mkvlab("simulate", &s, &out, &[]).status.success());
    assert_eq!(mkvlab("simulate", &s, &out, &[]).status.code(), Some(1));
    assert!(mkvlab("simulate", &s, &out, &["--force"]).status.success());
}

#[test]
fn bad_scenarios_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let typo = write_scenario(dir.path(), "typo.json", &SMALL_OU.replace("\"horizon\"", "\"horizn\""));
    let o = mkvlab("simulate", &typo, &dir.path().join("a"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizn"));

    let broken = write_scenario(dir.path(), "broken.json", "{\n\"kernel\": }");
    let o = mkvlab("simulate", &broken, &dir.path().join("b"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let ratio = write_scenario(dir.path(), "ratio.json", &SMALL_OU.replace("\"horizon\": 0.5", "\"horizon\": 0.505"));
    let o = mkvlab("simulate", &ratio, &dir.path().join("c"), &[]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizon/dt not integral"));
}

#[test]
fn seed_override_changes_payload_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), "s.json", SMALL_OU);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(mkvlab("simulate", &s, &a, &[]).status.success());
    assert!(mkvlab("simulate", &s, &b, &["--seed-override", "99"]).status.success());
    assert_ne!(std::fs::read(a.join("trajectory.csv")).unwrap(), std::fs::read(b.join("trajectory.csv")).unwrap());
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 99);
}

#[test]
fn uniqueness_gate_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(
        dir.path(),
        "s.json",
        r#"{"kernel": {"name": "degenerate_diffusion"}, "solver": {"n_particles": 10, "dt": 0.1, "horizon": 1, "seed": 1},
            "probe": {"probes": 200}, "experiment": {"perturbation": {"type": "initial_shift", "delta": 0.001}}}"#,
    );
    assert_eq!(mkvlab("uniqueness", &s, &dir.path().join("out"), &[]).status.code(), Some(2));
}

#[test]
fn threads_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), "s.json", SMALL_OU);
    let out = dir.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_mkvlab"))
        .args(["simulate", "--scenario"])
        .arg(&s)
        .arg("--out")
        .arg(&out)
        .env("MKVLAB_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success());
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["threads"], 2);
}
