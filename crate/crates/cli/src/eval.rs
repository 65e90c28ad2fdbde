use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dagpost::eval::{
    ci95_half_width, evaluate, true_posterior, EvalInputs, F1Aggregation, MetricReport, Predictive,
    TruePosterior,
};
use dagpost::inference::chain_rng;
use dagpost::io::{read_json, write_json};
use dagpost::scm::ModelKind;

use crate::commands::{load_data, read_particles, read_truth};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::RunTimer;

pub const METRICS: [&str; 5] = ["e_shd", "edge_f1", "nll", "mmd", "e_cpdag_shd"];
const DEFAULT_METRICS: [&str; 3] = ["e_shd", "edge_f1", "nll"];
/// Largest `d` with an enumerable exact posterior.
const EXACT_MAX_D: usize = 5;
/// Stream of the evaluation rng; chains use streams `1..=chains`.
const EVAL_STREAM: u64 = u64::MAX;

/// Metrics averaged over a directory of runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n_runs: usize,
    pub runs: Vec<String>,
    pub mean: BTreeMap<String, f64>,
    /// 95% half-widths across runs.
    pub ci95: BTreeMap<String, f64>,
    pub per_run: Vec<MetricReport>,
}

pub enum EvalOutcome {
    Single(MetricReport),
    Aggregate(AggregateReport),
}

fn metric_value(r: &MetricReport, name: &str) -> Option<f64> {
    match name {
        "e_shd" => r.e_shd,
        "edge_f1" => r.edge_f1,
        "nll" => r.nll,
        "mmd" => r.mmd,
        "e_cpdag_shd" => r.e_cpdag_shd,
        _ => None,
    }
}

fn clear_metric(r: &mut MetricReport, name: &str) {
    match name {
        "e_shd" => r.e_shd = None,
        "edge_f1" => r.edge_f1 = None,
        "nll" => r.nll = None,
        "mmd" => r.mmd = None,
        "e_cpdag_shd" => r.e_cpdag_shd = None,
        _ => {}
    }
    r.ci95.remove(name);
}

/// Evaluates `<out>/particles.json`, or every run directory below `<out>`
/// when it holds none. Writes `metrics.json` next to the inputs.
pub fn cmd_eval(cfg: &ExperimentConfig) -> CliResult<EvalOutcome> {
    let timer = RunTimer::start("eval");
    let dir = cfg.out_dir();
    if dir.join("particles.json").exists() {
        let report = eval_run(cfg, &dir)?;
        let path = dir.join("metrics.json");
        write_json(&path, &report)?;
        timer.finish(cfg, &dir, vec![path])?;
        return Ok(EvalOutcome::Single(report));
    }
    let runs = run_dirs(&dir)?;
    if runs.is_empty() {
        return Err(CliError::Data(format!(
            "{} holds no particles.json and no run directories",
            dir.display()
        )));
    }
    let mut per_run = Vec::new();
    let mut names = Vec::new();
    for run in &runs {
        let sub = ExperimentConfig {
            out: Some(run.clone()),
            data: None,
            test: None,
            ..cfg.clone()
        };
        let report = eval_run(&sub, run)?;
        write_json(&run.join("metrics.json"), &report)?;
        names.push(
            run.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
        per_run.push(report);
    }
    let agg = aggregate(names, per_run);
    let path = dir.join("metrics.json");
    write_json(&path, &agg)?;
    timer.finish(cfg, &dir, vec![path])?;
    Ok(EvalOutcome::Aggregate(agg))
}

/// Subdirectories holding `particles.json`, sorted by name.
fn run_dirs(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut runs = Vec::new();
    for entry in
        std::fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?
    {
        let path = entry?.path();
        if path.is_dir() && path.join("particles.json").exists() {
            runs.push(path);
        }
    }
    runs.sort();
    Ok(runs)
}

pub fn aggregate(runs: Vec<String>, per_run: Vec<MetricReport>) -> AggregateReport {
    let mut mean_map = BTreeMap::new();
    let mut ci = BTreeMap::new();
    for name in METRICS {
        let values: Vec<f64> = per_run
            .iter()
            .filter_map(|r| metric_value(r, name))
            .collect();
        if !values.is_empty() {
            mean_map.insert(
                name.to_string(),
                values.iter().sum::<f64>() / values.len() as f64,
            );
            ci.insert(name.to_string(), ci95_half_width(&values));
        }
    }
    AggregateReport {
        n_runs: per_run.len(),
        runs,
        mean: mean_map,
        ci95: ci,
        per_run,
    }
}

fn eval_run(cfg: &ExperimentConfig, dir: &Path) -> CliResult<MetricReport> {
    let out = read_particles(&dir.join("particles.json"))?.into_output()?;
    let d = out.model.d();
    let data = load_data(&cfg.data_path())?;
    if data.d() != d {
        return Err(CliError::Data(format!(
            "particles have d={d} but the data has {} columns",
            data.d()
        )));
    }
    let truth_path = dir.join("truth.json");
    let truth = if truth_path.exists() {
        Some(read_truth(&truth_path)?)
    } else {
        None
    };
    if let Some(t) = &truth {
        if t.truth.graph.d() != d {
            return Err(CliError::Data(format!(
                "particles have d={d} but truth.json has d={}",
                t.truth.graph.d()
            )));
        }
    }
    let test = match cfg.test_path() {
        Some(p) => {
            let t = load_data(&p)?;
            if t.d() != d {
                return Err(CliError::Data(format!(
                    "test data has {} columns, expected {d}",
                    t.d()
                )));
            }
            Some(t)
        }
        None => None,
    };

    let linear = truth
        .as_ref()
        .map(|t| t.truth.kind())
        .unwrap_or(out.model.kind())
        == ModelKind::Linear;
    let mut selected: Vec<&str> = match &cfg.metrics {
        Some(m) => m.iter().map(String::as_str).collect(),
        None => DEFAULT_METRICS.to_vec(),
    };
    if d <= EXACT_MAX_D && linear {
        for extra in ["mmd", "e_cpdag_shd"] {
            if !selected.contains(&extra) {
                selected.push(extra);
            }
        }
    } else if selected.contains(&"mmd") {
        return Err(CliError::Config(format!(
            "mmd needs a linear model with d <= {EXACT_MAX_D}, got d={d}"
        )));
    }
    let needs_truth = selected
        .iter()
        .any(|m| matches!(*m, "e_shd" | "edge_f1" | "e_cpdag_shd"));
    if needs_truth && truth.is_none() {
        if cfg.metrics.is_some() {
            return Err(CliError::Data(format!(
                "{} is required for structural metrics",
                truth_path.display()
            )));
        }
        selected.retain(|m| !matches!(*m, "e_shd" | "edge_f1" | "e_cpdag_shd"));
    }
    if selected.contains(&"nll") && test.is_none() {
        if cfg.metrics.is_some() {
            return Err(CliError::Data("nll needs test data".into()));
        }
        selected.retain(|m| *m != "nll");
    }

    let mut rng = chain_rng(out.config.seed, EVAL_STREAM);
    let samples = out.sample_graphs(&data, cfg.graphs_per_particle, &mut rng)?;
    let graphs: Vec<_> = samples.iter().map(|s| s.graph.clone()).collect();
    let particles = out.buffer.to_vec();
    let members: Vec<_> = samples
        .iter()
        .map(|s| (s.graph.clone(), particles[s.particle].theta.as_slice()))
        .collect();

    let post = if selected.contains(&"mmd") {
        Some(load_or_enumerate(dir, &data)?)
    } else {
        None
    };
    let mut report = evaluate(&EvalInputs {
        samples: &graphs,
        truth: truth.as_ref().map(|t| &t.truth.graph),
        predictive: match (&test, selected.contains(&"nll")) {
            (Some(test), true) => Some(Predictive {
                model: &out.model,
                members: &members,
                test,
            }),
            _ => None,
        },
        true_posterior: post.as_ref(),
        f1: F1Aggregation::PerSample,
    })?;
    for name in METRICS {
        if !selected.contains(&name) {
            clear_metric(&mut report, name);
        }
    }
    Ok(report)
}

fn load_or_enumerate(dir: &Path, data: &dagpost::scm::Dataset) -> CliResult<TruePosterior> {
    let path = dir.join("posterior.json");
    if path.exists() {
        let post: TruePosterior = read_json(&path).map_err(|e| CliError::Data(e.to_string()))?;
        if post.d() != data.d() {
            return Err(CliError::Data(format!(
                "{} has d={}, expected {}",
                path.display(),
                post.d(),
                data.d()
            )));
        }
        return Ok(post);
    }
    Ok(true_posterior(data)?)
}
