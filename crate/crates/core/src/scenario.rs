//! JSON experiment description shared by every subcommand.
//!
//! ```json
//! {
//!   "kernel": {"name": "mean_field_ou", "params": []},
//!   "d": 1,
//!   "solver": {"n_particles": 2000, "dt": 0.001, "horizon": 1.0, "seed": 1},
//!   "pde": {"half_width": 8.0, "h": 0.05},
//!   "experiment": {"perturbation": {"type": "initial_shift", "delta": 0.001}, "seeds": [1, 2, 3]}
//! }
//! ```
//!
//! Unknown keys are rejected everywhere.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernels::{builtin_kernel_dims, table_kernel, KernelSpec};
use crate::particle::{Perturbation, SolverConfig};
use crate::regularity::ProbePlan;
use crate::uniqueness::{HarnessOptions, DEFAULT_BOUND_SLACK, DEFAULT_N_LADDER};
use crate::zvonkin::PdeGrid;

/// Kernel name accepted together with a `table` path.
pub const TABLE_KERNEL: &str = "table";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelRef {
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
    /// CSV file for the `table` kernel, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub perturbation: Perturbation,
    /// Empty means the solver seed alone.
    pub seeds: Vec<u64>,
    /// Empty means the solver dt alone.
    pub dt_ladder: Vec<f64>,
    pub t_block: Option<f64>,
    pub n_blocks: usize,
    pub n_ladder: Vec<usize>,
    pub bound_slack: f64,
    pub override_hypotheses: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            perturbation: Perturbation::None,
            seeds: Vec::new(),
            dt_ladder: Vec::new(),
            t_block: None,
            n_blocks: 1,
            n_ladder: DEFAULT_N_LADDER.to_vec(),
            bound_slack: DEFAULT_BOUND_SLACK,
            override_hypotheses: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kernel: KernelRef,
    #[serde(default = "one")]
    pub d: usize,
    /// Defaults to `d`.
    #[serde(default)]
    pub d1: Option<usize>,
    pub solver: SolverConfig,
    #[serde(default)]
    pub pde: Option<PdeGrid>,
    #[serde(default)]
    pub probe: Option<ProbePlan>,
    #[serde(default)]
    pub experiment: Option<ExperimentConfig>,
    /// Directory relative paths resolve against; not part of the schema.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn one() -> usize {
    1
}

impl Scenario {
    /// Parses and validates a scenario held in memory. Relative table paths
    /// resolve against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut scenario: Scenario = serde_json::from_str(text).map_err(|e| {
            let (line, column) = (e.line(), e.column());
            match e.classify() {
                serde_json::error::Category::Data => Error::Schema(format!("{e}")),
                _ => Error::Parse { line, column, message: e.to_string() },
            }
        })?;
        scenario.base_dir = base_dir.to_path_buf();
        scenario.fill_defaults();
        scenario.validate()?;
        Ok(scenario)
    }

    fn fill_defaults(&mut self) {
        self.d1.get_or_insert(self.d);
        self.pde.get_or_insert_with(PdeGrid::default);
        self.probe.get_or_insert_with(ProbePlan::default);
        self.experiment.get_or_insert_with(ExperimentConfig::default);
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Schema("d must be at least 1".into()));
        }
        if self.d1() < self.d {
            return Err(Error::Schema(format!("d1 = {} must be at least d = {}", self.d1(), self.d)));
        }
        self.solver.steps()?;
        self.solver.initial_law.validate(self.d)?;
        self.pde().nodes().map_err(|e| Error::Schema(format!("pde: {e}")))?;
        let exp = self.experiment();
        if exp.dt_ladder.iter().any(|dt| !(*dt > 0.0)) {
            return Err(Error::Schema("experiment.dt_ladder entries must be positive".into()));
        }
        if exp.n_blocks == 0 {
            return Err(Error::Schema("experiment.n_blocks must be at least 1".into()));
        }
        if !(exp.bound_slack >= 0.0) {
            return Err(Error::Schema("experiment.bound_slack must be nonnegative".into()));
        }
        if self.kernel.table.is_some() != (self.kernel.name == TABLE_KERNEL) {
            return Err(Error::Schema(format!("kernel.table is required exactly when kernel.name is \"{TABLE_KERNEL}\"")));
        }
        self.kernel()?;
        Ok(())
    }

    pub fn d1(&self) -> usize {
        self.d1.unwrap_or(self.d)
    }

    pub fn pde(&self) -> PdeGrid {
        self.pde.clone().unwrap_or_default()
    }

    pub fn probe(&self) -> ProbePlan {
        self.probe.clone().unwrap_or_default()
    }

    pub fn experiment(&self) -> ExperimentConfig {
        self.experiment.clone().unwrap_or_default()
    }

    pub fn harness_options(&self) -> HarnessOptions {
        let exp = self.experiment();
        HarnessOptions {
            override_hypotheses: exp.override_hypotheses,
            bound_slack: exp.bound_slack,
            probe: self.probe(),
            pde: self.pde(),
        }
    }

    /// Resolves the kernel against the registry or the table file.
    pub fn kernel(&self) -> Result<KernelSpec> {
        if let Some(table) = &self.kernel.table {
            let path = if table.is_absolute() { table.clone() } else { self.base_dir.join(table) };
            let spec = table_kernel(&path)?;
            if spec.d != self.d || spec.d1 != self.d1() {
                return Err(Error::Schema(format!(
                    "table kernel has d = {}, d1 = {} but the scenario declares d = {}, d1 = {}",
                    spec.d,
                    spec.d1,
                    self.d,
                    self.d1()
                )));
            }
            return Ok(spec);
        }
        builtin_kernel_dims(&self.kernel.name, &self.kernel.params, self.d, self.d1())
    }

    /// Replaces the solver seed; an empty seed list keeps following it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.solver.seed = seed;
        self
    }

    /// Canonical JSON with every default filled in.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }

    /// Hex SHA-256 of [`Scenario::canonical_json`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Scenario::from_json(&text, &base)
}
