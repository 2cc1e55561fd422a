//! Run configuration.
//!
//! Values are resolved in three layers: built-in defaults, then the TOML file
//! given with `--config`, then command-line flags. A flag always wins over
//! the file. The resolved configuration, minus the output directory, is
//! echoed into every run directory so a run can be repeated elsewhere with
//! `--config <run>/config.toml --out <new dir>`.

use std::path::{Path, PathBuf};

use causelab::downstream::{TaskKind, TaskSpec, MIN_COMPARISON_SEEDS};
use causelab::envworld::{make_setup_from_grid, EnvSpec, ObsMask, SetupGrid, SetupName, WorldConstants};
use causelab::planner::CemConfig;
use causelab::trajdist::DEFAULT_GAMMA;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Deepest tree the `k` key accepts.
pub const MAX_K: usize = 10;

/// Overrides for the default factor grid of the chosen setup.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridOverride {
    pub masses: Option<Vec<f64>>,
    pub sizes: Option<Vec<f64>>,
    pub frictions: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownstreamSection {
    pub task: TaskKind,
    /// Defaults to 0.5 m for lifting and 1.0 m/s for travel.
    pub target: Option<f64>,
    pub seeds: Vec<u64>,
    /// Fine-tuning iterations per condition.
    pub iters: usize,
    /// Trained tree whose root experiment seeds the Curious condition.
    pub tree: Option<PathBuf>,
    /// Alternative to `tree`: a bare plan (JSON array of actions).
    pub plan: Option<PathBuf>,
    /// Restricts the task to these env ids of the setup.
    pub env_ids: Option<Vec<u32>>,
}

impl Default for DownstreamSection {
    fn default() -> Self {
        Self {
            task: TaskKind::Lifting,
            target: None,
            seeds: (0..10).collect(),
            iters: 20,
            tree: None,
            plan: None,
            env_ids: None,
        }
    }
}

impl DownstreamSection {
    pub fn task_spec(&self) -> TaskSpec {
        let target = self.target.unwrap_or(match self.task {
            TaskKind::Lifting => 0.5,
            TaskKind::Travel => 1.0,
        });
        TaskSpec::new(self.task, target)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferSection {
    pub tree: Option<PathBuf>,
    /// JSON array of env specs; the configured setup is used when absent.
    pub envs: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub runs: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub setup: Option<SetupName>,
    pub k: Option<usize>,
    /// Observation mask; discovery defaults to `xz`, inference to the tree's.
    pub mask: Option<ObsMask>,
    pub seed: u64,
    pub gamma: f64,
    /// Not echoed: a rerun always names a fresh directory.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub cem: CemConfig,
    pub world: WorldConstants,
    pub grid: GridOverride,
    pub downstream: DownstreamSection,
    pub infer: InferSection,
    pub report: ReportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            setup: None,
            k: None,
            mask: None,
            seed: 0,
            gamma: DEFAULT_GAMMA,
            out: None,
            cem: CemConfig::default(),
            world: WorldConstants::default(),
            grid: GridOverride::default(),
            downstream: DownstreamSection::default(),
            infer: InferSection::default(),
            report: ReportSection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub setup: Option<SetupName>,
    pub k: Option<usize>,
    pub mask: Option<ObsMask>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub task: Option<TaskKind>,
    pub target: Option<f64>,
    pub seeds: Option<Vec<u64>>,
    pub tree: Option<PathBuf>,
    pub plan: Option<PathBuf>,
    pub envs: Option<PathBuf>,
    pub runs: Option<Vec<PathBuf>>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }

    /// Applies flag values. `tree` is routed to the section of `command`.
    pub fn apply(&mut self, o: Overrides, command: &str) {
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(self.setup, o.setup.map(Some));
        set!(self.k, o.k.map(Some));
        set!(self.mask, o.mask.map(Some));
        set!(self.seed, o.seed);
        set!(self.out, o.out.map(Some));
        set!(self.downstream.task, o.task);
        set!(self.downstream.target, o.target.map(Some));
        set!(self.downstream.seeds, o.seeds);
        set!(self.downstream.plan, o.plan.map(Some));
        set!(self.infer.envs, o.envs.map(Some));
        set!(self.report.runs, o.runs);
        if let Some(tree) = o.tree {
            if command == "downstream" {
                self.downstream.tree = Some(tree);
            } else {
                self.infer.tree = Some(tree);
            }
        }
    }

    /// Range checks shared by every command.
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(CliError::Config(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if let Some(k) = self.k {
            if k > MAX_K {
                return Err(CliError::Config(format!("k must be in [0, {MAX_K}], got {k}")));
            }
        }
        self.cem.validate()?;
        self.world.validate()?;
        for (key, values) in [
            ("grid.masses", &self.grid.masses),
            ("grid.sizes", &self.grid.sizes),
            ("grid.frictions", &self.grid.frictions),
        ] {
            if let Some(values) = values {
                if values.is_empty() {
                    return Err(CliError::Config(format!("{key} must not be empty")));
                }
                let ok = |v: f64| if key == "grid.frictions" { v >= 0.0 } else { v > 0.0 };
                if let Some(bad) = values.iter().find(|&&v| !(v.is_finite() && ok(v))) {
                    return Err(CliError::Config(format!("{key} contains out-of-range value {bad}")));
                }
            }
        }
        let d = &self.downstream;
        if d.iters == 0 {
            return Err(CliError::Config("downstream.iters must be >= 1".into()));
        }
        if d.seeds.len() < MIN_COMPARISON_SEEDS {
            return Err(CliError::Config(format!(
                "downstream.seeds needs at least {MIN_COMPARISON_SEEDS} seeds, got {}",
                d.seeds.len()
            )));
        }
        Ok(())
    }

    pub fn require_setup(&self) -> Result<SetupName> {
        self.setup.ok_or_else(|| CliError::Config("missing required field `setup`".into()))
    }

    pub fn require_k(&self) -> Result<usize> {
        self.k.ok_or_else(|| CliError::Config("missing required field `k`".into()))
    }

    pub fn require_out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Config("missing required field `out` (use --out DIR)".into()))
    }

    pub fn grid(&self, setup: SetupName) -> SetupGrid {
        let base = setup.grid();
        SetupGrid {
            masses: self.grid.masses.clone().unwrap_or(base.masses),
            sizes: self.grid.sizes.clone().unwrap_or(base.sizes),
            frictions: self.grid.frictions.clone().unwrap_or(base.frictions),
        }
    }

    /// Environments of the configured setup, ordered by `seed`.
    pub fn setup_envs(&self) -> Result<Vec<EnvSpec>> {
        let setup = self.require_setup()?;
        Ok(make_setup_from_grid(&self.grid(setup), self.world, self.seed)?)
    }
}
