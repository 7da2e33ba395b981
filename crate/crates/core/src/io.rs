//! Output writers. Every payload is a pure function of its inputs so repeated
//! runs produce identical bytes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::particle::{DifferenceTrace, TrajectoryRecord};
use crate::zvonkin::{GradientField, GridField};

fn float(v: f64) -> String {
    format!("{v:?}")
}

/// Creates `dir`, refusing a non-empty existing directory unless `force`.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Error::InvalidParameter(format!("{} exists and is not a directory", dir.display())));
        }
        if !force && fs::read_dir(dir)?.next().is_some() {
            return Err(Error::InvalidParameter(format!(
                "output directory {} is not empty (pass --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// `t, mean_i, cov_i_j, m2`, one row per recorded step.
pub fn write_trajectory_csv(path: &Path, record: &TrajectoryRecord) -> Result<()> {
    let d = record.d;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|i| format!("mean_{i}")));
    for i in 1..=d {
        header.extend((1..=d).map(|j| format!("cov_{i}_{j}")));
    }
    header.push("m2".into());
    w.write_record(&header)?;
    for k in 0..record.times.len() {
        let mut row = vec![float(record.times[k])];
        row.extend(record.means[k].iter().copied().map(float));
        row.extend(record.covariances[k].iter().copied().map(float));
        row.push(float(record.second_moments[k]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `t, trace`.
pub fn write_trace_csv(path: &Path, trace: &DifferenceTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "trace"])?;
    for (t, v) in trace.times.iter().zip(&trace.values) {
        w.write_record([float(*t), float(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// `t, x, u, du_dx` over the whole grid.
pub fn write_field_csv(path: &Path, field: &GridField, gradient: &GradientField) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "x", "u", "du_dx"])?;
    let width = field.xs.len();
    for (k, t) in field.times.iter().enumerate() {
        for (j, x) in field.xs.iter().enumerate() {
            let idx = k * width + j;
            w.write_record([float(*t), float(*x), float(field.u[idx]), float(gradient.values[idx])])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathsLayout {
    pub file: String,
    pub dtype: &'static str,
    pub layout: &'static str,
    pub steps: usize,
    pub n_particles: usize,
    pub d: usize,
}

/// Raw little-endian f64 paths plus a JSON sidecar describing the layout.
pub fn write_paths_bin(bin: &Path, sidecar: &Path, record: &TrajectoryRecord) -> Result<()> {
    let paths = record.paths.as_ref().ok_or(Error::MissingPaths)?;
    let mut out = BufWriter::new(File::create(bin)?);
    for v in paths {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    let layout = PathsLayout {
        file: bin.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        dtype: "f64-le",
        layout: "step-major [step][particle][dim]",
        steps: record.times.len(),
        n_particles: record.n_particles,
        d: record.d,
    };
    write_json(sidecar, &layout)
}

/// Run provenance written next to every output set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub scenario_path: String,
    pub scenario_hash: String,
    pub scenario: serde_json::Value,
    pub seed: u64,
    pub threads: usize,
    pub started_unix_seconds: u64,
    pub wall_time_seconds: f64,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub outputs: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::builtin_kernel;
    use crate::particle::{simulate, InitialLaw, SolverConfig};

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("mkvlab-io-{}-{name}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn out_dir_collision() {
        let dir = tmp("collide");
        prepare_out_dir(&dir, false).unwrap();
        prepare_out_dir(&dir, false).unwrap();
        fs::write(dir.join("x"), "1").unwrap();
        assert!(prepare_out_dir(&dir, false).is_err());
        prepare_out_dir(&dir, true).unwrap();
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn trajectory_rows() {
        let dir = tmp("traj");
        prepare_out_dir(&dir, false).unwrap();
        let k = builtin_kernel("mean_field_ou", &[]).unwrap();
        let rec = simulate(&k, &SolverConfig::new(8, 0.1, 1.0, 1, InitialLaw::delta(0.0))).unwrap();
        let path = dir.join("trajectory.csv");
        write_trajectory_csv(&path, &rec).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,mean_1,cov_1_1,m2");
        assert_eq!(lines.len(), 1 + 11);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn floats_round_trip() {
        for v in [0.1 + 0.2, 1e-300, -3.5, 0.0] {
            assert_eq!(float(v).parse::<f64>().unwrap(), v);
        }
    }
}
