use std::path::PathBuf;

use dagpost::eval::true_posterior;
use dagpost::graphs::sample_dag;
use dagpost::inference::{chain_rng, train};
use dagpost::io::{read_json, write_dataset, write_json, ParticlesFile, TruthFile};
use dagpost::scm::{ancestral_sample, make_ground_truth, Dataset};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::RunTimer;

/// Writes `data.csv`, `test.csv` and `truth.json`.
pub fn cmd_gen(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    let timer = RunTimer::start("gen");
    let spec = &cfg.dataset;
    let family = spec.graph_family()?;
    let mut rng = chain_rng(spec.seed, 0);
    let graph = sample_dag(&family, &mut rng)?;
    let truth = make_ground_truth(&graph, spec.model, &mut rng);
    let data = ancestral_sample(&truth, spec.n + spec.n_test, &mut rng)?;
    let out = cfg.out_dir();
    let mut outputs = Vec::new();
    if spec.n_test > 0 {
        let (train, test) = data.split(spec.n)?;
        write_dataset(&out.join("data.csv"), &train)?;
        write_dataset(&out.join("test.csv"), &test)?;
        outputs.extend([out.join("data.csv"), out.join("test.csv")]);
    } else {
        write_dataset(&out.join("data.csv"), &data)?;
        outputs.push(out.join("data.csv"));
    }
    let file = TruthFile {
        truth,
        seed: spec.seed,
        family: Some(family),
    };
    write_json(&out.join("truth.json"), &file)?;
    outputs.push(out.join("truth.json"));
    timer.finish(cfg, &out, outputs.clone())?;
    Ok(outputs)
}

pub fn load_data(path: &std::path::Path) -> CliResult<Dataset> {
    Dataset::read_csv(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Runs the selected trainer and writes `particles.json`.
pub fn cmd_train(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let timer = RunTimer::start("train");
    let data = load_data(&cfg.data_path())?;
    let tc = cfg.train_config()?;
    log::info!(
        "training {} mode on {} rows, d={}",
        cfg.mode,
        data.n(),
        data.d()
    );
    let out = train(&data, &tc, cfg.mode)?;
    if out.stats.reinitializations > 0 {
        log::warn!(
            "{} chain reinitializations after numeric failures",
            out.stats.reinitializations
        );
    }
    let dir = cfg.out_dir();
    let path = dir.join("particles.json");
    write_json(&path, &ParticlesFile::from_output(&out))?;
    timer.finish(cfg, &dir, vec![path.clone()])?;
    Ok(path)
}

/// Enumerates the exact BGe posterior of the training data.
pub fn cmd_true_posterior(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let timer = RunTimer::start("true-posterior");
    let data = load_data(&cfg.data_path())?;
    let post = true_posterior(&data)?;
    let dir = cfg.out_dir();
    let path = dir.join("posterior.json");
    write_json(&path, &post)?;
    timer.finish(cfg, &dir, vec![path.clone()])?;
    Ok(path)
}

pub fn read_truth(path: &std::path::Path) -> CliResult<TruthFile> {
    read_json(path).map_err(|e| CliError::Data(e.to_string()))
}

pub fn read_particles(path: &std::path::Path) -> CliResult<ParticlesFile> {
    read_json(path).map_err(|e| CliError::Data(e.to_string()))
}
