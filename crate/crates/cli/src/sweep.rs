use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Deserialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use dagpost::eval::MetricReport;
use dagpost::io::{write_atomic, write_json};

use crate::commands::{cmd_gen, cmd_train};
use crate::config::{ExperimentConfig, Overrides};
use crate::error::{CliError, CliResult};
use crate::eval::{aggregate, cmd_eval, EvalOutcome, METRICS};

/// Cartesian grid over config keys. `dataset.<field>`, `mode`, `preset` and
/// `graphs_per_particle` address the experiment config; every other key is a
/// training key.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub base: Value,
    pub grid: BTreeMap<String, Vec<Value>>,
    /// Datasets per grid point; repeat `r` uses dataset seed `base + r`.
    pub repeats: Option<usize>,
}

pub struct PointResult {
    pub values: Vec<Value>,
    pub reports: Vec<MetricReport>,
    pub failures: Vec<String>,
}

pub fn load_sweep(path: &std::path::Path) -> CliResult<SweepConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Every combination of grid values, in key order; one empty point for an empty grid.
pub fn grid_points(grid: &BTreeMap<String, Vec<Value>>) -> Vec<Vec<Value>> {
    let mut points = vec![Vec::new()];
    for values in grid.values() {
        let mut next = Vec::with_capacity(points.len() * values.len());
        for p in &points {
            for v in values {
                let mut q = p.clone();
                q.push(v.clone());
                next.push(q);
            }
        }
        points = next;
    }
    points
}

/// Training seed for a grid point and repeat.
pub fn derive_seed(base: u64, point: usize, repeat: usize) -> u64 {
    let digest = Sha256::digest(format!("{base}:{point}:{repeat}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn set_key(cfg: &mut Value, key: &str, value: Value) -> CliResult<()> {
    let obj = cfg
        .as_object_mut()
        .ok_or_else(|| CliError::Config("sweep base must be an object".into()))?;
    if let Some(field) = key.strip_prefix("dataset.") {
        let ds = obj
            .entry("dataset")
            .or_insert_with(|| Value::Object(Default::default()));
        ds.as_object_mut()
            .ok_or_else(|| CliError::Config("\"dataset\" must be an object".into()))?
            .insert(field.to_string(), value);
    } else if matches!(key, "mode" | "preset" | "graphs_per_particle") {
        obj.insert(key.to_string(), value);
    } else {
        let train = obj
            .entry("train")
            .or_insert_with(|| Value::Object(Default::default()));
        train
            .as_object_mut()
            .ok_or_else(|| CliError::Config("\"train\" must be an object".into()))?
            .insert(key.to_string(), value);
    }
    Ok(())
}

fn run_one(cfg: &ExperimentConfig) -> CliResult<MetricReport> {
    if cfg.data.is_none() {
        cmd_gen(cfg)?;
    }
    cmd_train(cfg)?;
    match cmd_eval(cfg)? {
        EvalOutcome::Single(r) => Ok(r),
        EvalOutcome::Aggregate(_) => Err(CliError::Data("unexpected nested runs".into())),
    }
}

fn point_config(
    sweep: &SweepConfig,
    keys: &[&String],
    values: &[Value],
    o: &Overrides,
) -> CliResult<ExperimentConfig> {
    let mut base = match &sweep.base {
        Value::Null => serde_json::to_value(ExperimentConfig::default())?,
        v => v.clone(),
    };
    for (k, v) in keys.iter().zip(values) {
        set_key(&mut base, k, v.clone())?;
    }
    let mut cfg = ExperimentConfig::from_value(base)?;
    cfg.apply(&Overrides {
        out: None,
        ..o.clone()
    })?;
    Ok(cfg)
}

/// Runs gen, train and eval per grid point and repeat, then writes `sweep.csv`.
/// A failing run is recorded in its `error.json` and the sweep continues.
pub fn cmd_sweep(sweep: &SweepConfig, o: &Overrides) -> CliResult<(PathBuf, Vec<PointResult>)> {
    let root = o.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let keys: Vec<&String> = sweep.grid.keys().collect();
    let repeats = sweep.repeats.unwrap_or(1).max(1);
    let mut results = Vec::new();
    for (k, values) in grid_points(&sweep.grid).into_iter().enumerate() {
        let mut point = PointResult {
            values: values.clone(),
            reports: Vec::new(),
            failures: Vec::new(),
        };
        for r in 0..repeats {
            let dir = if repeats == 1 {
                root.join(format!("point-{k:03}"))
            } else {
                root.join(format!("point-{k:03}"))
                    .join(format!("rep-{r:02}"))
            };
            let outcome = point_config(sweep, &keys, &values, o).and_then(|mut cfg| {
                let train_seed = cfg.train_config()?.seed;
                cfg.dataset.seed += r as u64;
                cfg.set_train_key("seed", Value::from(derive_seed(train_seed, k, r)))?;
                cfg.out = Some(dir.clone());
                run_one(&cfg)
            });
            match outcome {
                Ok(report) => point.reports.push(report),
                Err(e) => {
                    log::error!("sweep point {k} repeat {r}: {e}");
                    let record =
                        serde_json::json!({ "error": e.to_string(), "exit_code": e.exit_code() });
                    if let Err(w) = write_json(&dir.join("error.json"), &record) {
                        log::error!("could not record failure: {w}");
                    }
                    point.failures.push(e.to_string());
                }
            }
        }
        results.push(point);
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = vec!["point".into()];
    header.extend(keys.iter().map(|k| k.to_string()));
    header.extend(["runs".into(), "failed".into()]);
    for m in METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_ci95"));
    }
    w.write_record(&header)?;
    for (k, point) in results.iter().enumerate() {
        let agg = aggregate(Vec::new(), point.reports.clone());
        let mut row = vec![k.to_string()];
        row.extend(point.values.iter().map(|v| match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }));
        row.extend([
            point.reports.len().to_string(),
            point.failures.len().to_string(),
        ]);
        for m in METRICS {
            row.push(agg.mean.get(m).map(|v| v.to_string()).unwrap_or_default());
            row.push(agg.ci95.get(m).map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    let path = root.join("sweep.csv");
    write_atomic(&path, &bytes)?;
    Ok((path, results))
}
