use std::path::{Path, PathBuf};

use horizon_est::sim::{Scenario, SweepCase};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOptions {
    pub cases: Vec<SweepCase>,
    pub seeds: Vec<u64>,
    /// Worker threads; `HORIZON_EST_THREADS` caps it further.
    #[serde(default)]
    pub threads: Option<usize>,
}

/// JSON document driving `simulate`, `estimate` and `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_plot")]
    pub plot: bool,
    #[serde(default)]
    pub sweep: Option<SweepOptions>,
}

fn default_plot() -> bool {
    true
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.scenario
            .validate()
            .map_err(|e| CliError::from_core(e).with_context(&path.display().to_string()))?;
        Ok(cfg)
    }

    /// `--out` wins over the configured directory; the default is `output`.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("output"))
    }
}
