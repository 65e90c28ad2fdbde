//! `dagpost`: generate data, train, evaluate, enumerate exact posteriors and
//! run sweeps. Exit codes: 0 success, 2 config error, 3 data error, 4
//! numeric failure.

mod commands;
mod config;
mod error;
mod eval;
mod manifest;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dagpost::inference::{Mode, TrainConfig};

use crate::config::{ExperimentConfig, Overrides};
use crate::error::CliResult;
use crate::eval::EvalOutcome;

#[derive(Parser)]
#[command(name = "dagpost", version, about = "Bayesian DAG posterior sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a ground-truth SCM and write data.csv, test.csv and truth.json.
    Gen(Common),
    /// Train on <out>/data.csv (or the config's data path) and write particles.json.
    Train(Common),
    /// Evaluate <out>/particles.json, or every run directory below <out>.
    Eval(Common),
    /// Enumerate the exact BGe posterior of the training data (d <= 5).
    TruePosterior(Common),
    /// Run gen, train and eval over a grid; --config names a sweep file.
    Sweep(Common),
    /// List the named training presets.
    Presets,
}

#[derive(Args, Clone, Default)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated metric names.
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    #[arg(long)]
    threads: Option<usize>,
    /// Training CSV; overrides the config.
    #[arg(long)]
    data: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            mode: self.mode,
            preset: self.preset.clone(),
            seed: self.seed,
            out: self.out.clone(),
            metrics: self.metrics.clone(),
            threads: self.threads,
        }
    }

    fn experiment(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&self.overrides())?;
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
        }
        Ok(cfg)
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen(c) => {
            for p in commands::cmd_gen(&c.experiment()?)? {
                println!("{}", p.display());
            }
        }
        Command::Train(c) => println!("{}", commands::cmd_train(&c.experiment()?)?.display()),
        Command::Eval(c) => match eval::cmd_eval(&c.experiment()?)? {
            EvalOutcome::Single(r) => print_json(&r)?,
            EvalOutcome::Aggregate(a) => print_json(&a)?,
        },
        Command::TruePosterior(c) => println!(
            "{}",
            commands::cmd_true_posterior(&c.experiment()?)?.display()
        ),
        Command::Sweep(c) => {
            let sweep = match &c.config {
                Some(p) => sweep::load_sweep(p)?,
                None => sweep::SweepConfig::default(),
            };
            let (path, results) = sweep::cmd_sweep(&sweep, &c.overrides())?;
            let failed: usize = results.iter().map(|r| r.failures.len()).sum();
            if failed > 0 {
                log::warn!("{failed} sweep runs failed; see error.json in their directories");
            }
            println!("{}", path.display());
        }
        Command::Presets => {
            for name in TrainConfig::preset_names() {
                let p = TrainConfig::preset(name)?;
                println!(
                    "{name}\tlambda_s={} scale_p={} scale_theta={} sparse_init={}",
                    p.lambda_s, p.scale_p, p.scale_theta, p.sparse_init
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
