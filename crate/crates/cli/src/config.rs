use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use dagpost::graphs::{GraphFamily, GraphKind};
use dagpost::inference::{Mode, TrainConfig};
use dagpost::scm::ModelKind;

use crate::error::{CliError, CliResult};

/// Synthetic dataset description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub family: GraphKind,
    pub d: usize,
    pub n: usize,
    pub n_test: usize,
    pub model: ModelKind,
    pub seed: u64,
    /// Defaults to `d`, capped at `d(d-1)/2`.
    pub expected_edges: Option<usize>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            family: GraphKind::ErdosRenyi,
            d: 5,
            n: 500,
            n_test: 100,
            model: ModelKind::Linear,
            seed: 0,
            expected_edges: None,
        }
    }
}

impl DatasetSpec {
    pub fn graph_family(&self) -> CliResult<GraphFamily> {
        let max = self.d * self.d.saturating_sub(1) / 2;
        let edges = self.expected_edges.unwrap_or(self.d.min(max));
        Ok(GraphFamily::new(self.family, self.d, edges)?)
    }
}

/// Everything one run needs. `train` holds overrides applied on top of the
/// preset (or the defaults).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub preset: Option<String>,
    pub mode: Mode,
    pub train: Value,
    pub metrics: Option<Vec<String>>,
    /// Graphs drawn per stored particle at evaluation time.
    pub graphs_per_particle: usize,
    /// External training CSV; defaults to `<out>/data.csv`.
    pub data: Option<PathBuf>,
    /// External test CSV; defaults to `<out>/test.csv` when present.
    pub test: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::default(),
            preset: None,
            mode: Mode::Gibbs,
            train: Value::Object(Default::default()),
            metrics: None,
            graphs_per_particle: 1,
            data: None,
            test: None,
            out: None,
        }
    }
}

/// Command-line overrides shared by all subcommands.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub metrics: Option<Vec<String>>,
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    /// Reads a config file. A run manifest is accepted too, in which case its
    /// embedded config is used.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if value.get("config_hash").is_some() {
            if let Some(inner) = value.get_mut("config") {
                value = inner.take();
            }
        }
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> CliResult<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> CliResult<()> {
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(p) = &o.preset {
            self.preset = Some(p.clone());
        }
        if let Some(s) = o.seed {
            self.dataset.seed = s;
            self.set_train_key("seed", Value::from(s))?;
        }
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
        if let Some(m) = &o.metrics {
            self.metrics = Some(m.clone());
        }
        if let Some(t) = o.threads {
            self.set_train_key("threads", Value::from(t))?;
        }
        self.check()
    }

    pub fn set_train_key(&mut self, key: &str, value: Value) -> CliResult<()> {
        match &mut self.train {
            Value::Object(map) => {
                map.insert(key.to_string(), value);
                Ok(())
            }
            Value::Null => {
                self.train = serde_json::json!({ key: value });
                Ok(())
            }
            _ => Err(CliError::Config("\"train\" must be a JSON object".into())),
        }
    }

    fn check(&self) -> CliResult<()> {
        if self.dataset.d == 0 || self.dataset.n == 0 {
            return Err(CliError::Config("dataset d and n must be positive".into()));
        }
        if self.graphs_per_particle == 0 {
            return Err(CliError::Config(
                "graphs_per_particle must be positive".into(),
            ));
        }
        self.dataset.graph_family()?;
        self.train_config()?;
        if let Some(m) = &self.metrics {
            for name in m {
                if !crate::eval::METRICS.contains(&name.as_str()) {
                    return Err(CliError::Config(format!(
                        "unknown metric {name:?}; known: {}",
                        crate::eval::METRICS.join(", ")
                    )));
                }
            }
        }
        Ok(())
    }

    /// Preset (or defaults with the dataset's model kind), then `train` overrides.
    pub fn train_config(&self) -> CliResult<TrainConfig> {
        let base = match &self.preset {
            Some(name) => TrainConfig::preset(name)?,
            None => TrainConfig {
                model: self.dataset.model,
                ..TrainConfig::default()
            },
        };
        let overrides = match &self.train {
            Value::Null => Value::Object(Default::default()),
            v => v.clone(),
        };
        Ok(base.merge_json(&overrides)?)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn data_path(&self) -> PathBuf {
        self.data
            .clone()
            .unwrap_or_else(|| self.out_dir().join("data.csv"))
    }

    pub fn test_path(&self) -> Option<PathBuf> {
        match &self.test {
            Some(p) => Some(p.clone()),
            None => {
                let p = self.out_dir().join("test.csv");
                p.exists().then_some(p)
            }
        }
    }

    /// Config with the training section fully resolved, so that it replays
    /// without depending on preset definitions.
    pub fn resolved(&self) -> CliResult<Self> {
        let mut c = self.clone();
        c.train = serde_json::to_value(self.train_config()?)?;
        c.preset = None;
        Ok(c)
    }

    /// SHA-256 over the resolved config, hex encoded.
    pub fn hash(&self) -> CliResult<String> {
        let bytes = serde_json::to_vec(&self.resolved()?)?;
        let digest = Sha256::digest(&bytes);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
