//! Run configuration files, output-root resolution, run snapshots and
//! cleanup of partial outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::TrainSettings;
use crate::nn::checkpoint::write_atomic;
use crate::solvers::{PlanConfig, SolverOverrides};

/// Environment variable that replaces the output root of every command.
pub const ROOT_ENV_VAR: &str = "LCB_OUTPUT_ROOT";
pub const DEFAULT_ROOT: &str = "runs";

pub fn build_id() -> String {
    format!("{} {}", env!("CARGO_PKG_VERSION"), option_env!("LCB_BUILD_ID").unwrap_or("unknown"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n_tasks: Option<usize>,
    pub offset: usize,
    pub budget: usize,
    pub plan: PlanConfig,
    pub solver: SolverOverrides,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { n_tasks: None, offset: 25, budget: 50, plan: PlanConfig::default(), solver: SolverOverrides::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseSection {
    /// Sampled (state, action) pairs for the conditioning check.
    pub samples: usize,
    pub eps: f64,
    pub windows: Vec<usize>,
    /// Tasks for the error-propagation runs.
    pub episodes: usize,
    /// Constant action bias as a fraction of the action bound.
    pub bias: f64,
    /// Latent coordinate whose marginal is dumped.
    pub marginal_dim: usize,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        Self { samples: 200, eps: crate::diagnostics::DEFAULT_EPS, windows: vec![1, 5, 25], episodes: 40, bias: 0.1, marginal_dim: 0 }
    }
}

/// Contents of a `--config` TOML file. Every section is optional; unknown
/// keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub root: Option<PathBuf>,
    pub train: TrainSettings,
    pub eval: EvalSection,
    pub diagnose: DiagnoseSection,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// `--root`, then the environment variable, then the config file, then
/// [`DEFAULT_ROOT`].
pub fn resolve_root(flag: Option<&Path>, env_value: Option<&str>, file: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(v) = env_value.filter(|v| !v.is_empty()) {
        return PathBuf::from(v);
    }
    file.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT))
}

/// Everything a run resolved, written as `run_<command>.json` beside its
/// outputs.
#[derive(Serialize)]
pub struct Snapshot<'a, A: Serialize> {
    pub command: &'a str,
    pub build: String,
    pub root: &'a Path,
    pub args: &'a A,
    pub config: &'a FileConfig,
}

pub fn write_snapshot<A: Serialize>(dir: &Path, snap: &Snapshot<'_, A>) -> Result<PathBuf> {
    let path = dir.join(format!("run_{}.json", snap.command));
    let mut text = serde_json::to_string_pretty(snap)?;
    text.push('\n');
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

/// Output files a command is about to create. Unless [`Self::commit`] is
/// called, files that did not exist when claimed are deleted on drop.
#[derive(Debug, Default)]
pub struct OutputGuard {
    fresh: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn claim(&mut self, path: impl Into<PathBuf>) {
        let path = path.into();
        if !path.exists() {
            self.fresh.push(path);
        }
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.fresh {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}
