use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliResult;

/// Record of one command invocation, written once its outputs exist.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub version: String,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    pub seeds: BTreeMap<String, u64>,
    pub outputs: Vec<PathBuf>,
    pub config: ExperimentConfig,
}

pub struct RunTimer {
    command: &'static str,
    started_unix: u64,
    start: Instant,
}

impl RunTimer {
    pub fn start(command: &'static str) -> Self {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        RunTimer {
            command,
            started_unix,
            start: Instant::now(),
        }
    }

    /// Writes `<dir>/manifest-<command>.json`.
    pub fn finish(
        self,
        cfg: &ExperimentConfig,
        dir: &Path,
        outputs: Vec<PathBuf>,
    ) -> CliResult<PathBuf> {
        let resolved = cfg.resolved()?;
        let train = resolved.train_config()?;
        let manifest = RunManifest {
            command: self.command.to_string(),
            config_hash: cfg.hash()?,
            version: format!("dagpost {}", env!("CARGO_PKG_VERSION")),
            started_unix: self.started_unix,
            wall_clock_secs: self.start.elapsed().as_secs_f64(),
            seeds: BTreeMap::from([
                ("dataset".to_string(), cfg.dataset.seed),
                ("train".to_string(), train.seed),
            ]),
            outputs,
            config: resolved,
        };
        let path = dir.join(format!("manifest-{}.json", self.command));
        dagpost::io::write_json(&path, &manifest)?;
        Ok(path)
    }
}
