use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

use dagpost::graphs::topological_order;
use dagpost::inference::{Mode, Particle, TrainConfig, TrainStats};
use dagpost::io::{read_json, write_json, ParticlesFile, TruthFile};
use dagpost::scm::{ModelKind, ScmModel};

fn dagpost(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dagpost"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dagpost(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn line_count(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_train() -> Value {
    json!({ "chains": 2, "epochs": 6, "batch": 50, "particles": 4, "mc_samples": 2 })
}

#[test]
fn gen_writes_split_files_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "cfg.json",
        &json!({ "dataset": { "family": "er", "d": 5, "n": 500, "n_test": 100, "model": "linear", "seed": 7 } }),
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["gen", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["gen", "--config", s(&cfg), "--out", s(&b)]);
    assert_eq!(line_count(&a.join("data.csv")), 501);
    assert_eq!(line_count(&a.join("test.csv")), 101);
    for f in ["data.csv", "test.csv", "truth.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let truth: TruthFile = read_json(&a.join("truth.json")).unwrap();
    assert_eq!(truth.seed, 7);
    assert_eq!(truth.truth.graph.d(), 5);
    assert_eq!(truth.truth.noise_var.len(), 5);
    let manifest: Value = read_json(&a.join("manifest-gen.json")).unwrap();
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn gen_nonlinear_large() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "cfg.json",
        &json!({ "dataset": { "d": 30, "n": 5000, "n_test": 1000, "model": "mlp", "seed": 1 } }),
    );
    ok(&["gen", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(line_count(&tmp.path().join("data.csv")), 5001);
    assert_eq!(line_count(&tmp.path().join("test.csv")), 1001);
}

#[test]
fn train_both_modes_then_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "cfg.json",
        &json!({ "dataset": { "d": 3, "n": 100, "n_test": 20 }, "train": tiny_train() }),
    );
    for mode in ["gibbs", "joint"] {
        let dir = tmp.path().join(mode);
        ok(&["gen", "--config", s(&cfg), "--out", s(&dir)]);
        ok(&[
            "train",
            "--config",
            s(&cfg),
            "--out",
            s(&dir),
            "--mode",
            mode,
        ]);
        let file: ParticlesFile = read_json(&dir.join("particles.json")).unwrap();
        assert_eq!(file.mode.to_string(), mode);
        assert_eq!(file.particles.len(), 4);
        assert_eq!(file.phi.is_some(), mode == "gibbs");
        let report: Value =
            serde_json::from_str(&ok(&["eval", "--config", s(&cfg), "--out", s(&dir)])).unwrap();
        for key in ["e_shd", "edge_f1", "nll", "mmd", "e_cpdag_shd"] {
            assert!(report[key].is_number(), "{mode}: {key} missing in {report}");
        }
        assert!(dir.join("manifest-train.json").exists());
    }
}

#[test]
fn preset_flag_sets_training_values() {
    let out = ok(&["presets"]);
    let line = out
        .lines()
        .find(|l| l.starts_with("nonlinear-er-30\t"))
        .unwrap();
    assert!(
        line.contains("lambda_s=500 scale_p=1 scale_theta=0.01"),
        "{line}"
    );

    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "cfg.json",
        &json!({ "dataset": { "d": 3, "n": 60, "n_test": 0 }, "train": tiny_train() }),
    );
    ok(&["gen", "--config", s(&cfg), "--out", s(tmp.path())]);
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(tmp.path()),
        "--preset",
        "linear-er-5",
    ]);
    let file: ParticlesFile = read_json(&tmp.path().join("particles.json")).unwrap();
    let preset = TrainConfig::preset("linear-er-5").unwrap();
    assert_eq!(file.config.lambda_s, preset.lambda_s);
    assert_eq!(file.config.chains, 2);
}

/// Joint-mode particles whose saturated logits always reproduce `graph`.
fn truth_particles(truth: &TruthFile, copies: usize) -> ParticlesFile {
    let g = &truth.truth.graph;
    let d = g.d();
    let order = topological_order(g);
    let mut p = vec![0.0; d];
    for (rank, &node) in order.iter().enumerate() {
        p[node] = (d - rank) as f64;
    }
    let logits: Vec<f64> = g
        .entries()
        .iter()
        .map(|&e| if e == 1 { 60.0 } else { -60.0 })
        .collect();
    let model = ScmModel::linear(d);
    let particles = (0..copies)
        .map(|k| Particle {
            chain: 0,
            step: k + 1,
            p: p.clone(),
            theta: vec![0.0; model.num_params()],
            w_logits: Some(logits.clone()),
        })
        .collect();
    ParticlesFile {
        chains: 1,
        mode: Mode::Joint,
        d,
        model: ModelKind::Linear,
        architecture: None,
        particles,
        phi: None,
        config: TrainConfig::default(),
        stats: TrainStats::default(),
    }
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.clone(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn eval_of_replicated_truth_is_perfect_and_read_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "cfg.json",
        &json!({ "dataset": { "d": 5, "n": 200, "n_test": 50, "seed": 3 } }),
    );
    let dir = tmp.path().join("run");
    ok(&["gen", "--config", s(&cfg), "--out", s(&dir)]);
    let truth: TruthFile = read_json(&dir.join("truth.json")).unwrap();
    write_json(&dir.join("particles.json"), &truth_particles(&truth, 5)).unwrap();
    let before = snapshot(&dir);
    let report: Value = serde_json::from_str(&ok(&["eval", "--out", s(&dir)])).unwrap();
    assert_eq!(report["e_shd"], 0.0);
    assert_eq!(report["edge_f1"], 1.0);
    assert_eq!(report["e_cpdag_shd"], 0.0);
    assert!(report["mmd"].is_number());
    let after: Vec<_> = snapshot(&dir)
        .into_iter()
        .filter(|(p, _)| before.iter().any(|(q, _)| q == p))
        .collect();
    assert_eq!(before, after);
}

#[test]
fn eval_omits_mmd_above_five_nodes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "cfg.json",
        &json!({ "dataset": { "d": 6, "n": 100, "n_test": 20 } }),
    );
    ok(&["gen", "--config", s(&cfg), "--out", s(tmp.path())]);
    let truth: TruthFile = read_json(&tmp.path().join("truth.json")).unwrap();
    write_json(
        &tmp.path().join("particles.json"),
        &truth_particles(&truth, 3),
    )
    .unwrap();
    let report: Value = serde_json::from_str(&ok(&["eval", "--out", s(tmp.path())])).unwrap();
    assert!(report["mmd"].is_null());
    assert!(report["e_cpdag_shd"].is_null());
    assert_eq!(report["e_shd"], 0.0);
    let out = dagpost(&["eval", "--out", s(tmp.path()), "--metrics", "e_shd,mmd"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_aggregates_a_directory_of_runs() {
    let tmp = tempfile::tempdir().unwrap();
    for seed in 0..3 {
        let dir = tmp.path().join(format!("run-{seed}"));
        let cfg = write_config(
            tmp.path(),
            "cfg.json",
            &json!({ "dataset": { "d": 4, "n": 100, "n_test": 20, "seed": seed }, "train": tiny_train() }),
        );
        ok(&["gen", "--config", s(&cfg), "--out", s(&dir)]);
        ok(&["train", "--config", s(&cfg), "--out", s(&dir)]);
    }
    let agg: Value = serde_json::from_str(&ok(&["eval", "--out", s(tmp.path())])).unwrap();
    assert_eq!(agg["n_runs"], 3);
    assert_eq!(agg["runs"], json!(["run-0", "run-1", "run-2"]));
    for key in ["e_shd", "edge_f1", "nll", "mmd"] {
        assert!(
            agg["mean"][key].is_number() && agg["ci95"][key].is_number(),
            "{key}"
        );
    }
    let runs = agg["per_run"].as_array().unwrap();
    let shd: Vec<f64> = runs.iter().map(|r| r["e_shd"].as_f64().unwrap()).collect();
    let mean = shd.iter().sum::<f64>() / 3.0;
    assert!((agg["mean"]["e_shd"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!(tmp.path().join("run-1").join("metrics.json").exists());
}

#[test]
fn true_posterior_files() {
    let tmp = tempfile::tempdir().unwrap();
    let one = tmp.path().join("one.csv");
    fs::write(&one, "x0\n0.1\n-0.4\n1.3\n").unwrap();
    ok(&["true-posterior", "--data", s(&one), "--out", s(tmp.path())]);
    let post: Value = read_json(&tmp.path().join("posterior.json")).unwrap();
    assert_eq!(post["graphs"].as_array().unwrap().len(), 1);
    assert_eq!(post["log_probs"], json!([0.0]));

    let cfg = write_config(
        tmp.path(),
        "cfg.json",
        &json!({ "dataset": { "d": 3, "n": 80, "n_test": 0 } }),
    );
    let dir = tmp.path().join("three");
    ok(&["gen", "--config", s(&cfg), "--out", s(&dir)]);
    ok(&["true-posterior", "--out", s(&dir)]);
    let post: Value = read_json(&dir.join("posterior.json")).unwrap();
    let lp: Vec<f64> = post["log_probs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(lp.len(), 25);
    assert!((lp.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-8);
    assert!(lp.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(
        tmp.path(),
        "bad.json",
        &json!({ "train": { "no_such_key": 1 } }),
    );
    assert_eq!(
        dagpost(&["gen", "--config", s(&bad), "--out", s(tmp.path())])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        dagpost(&[
            "train",
            "--preset",
            "no-such-preset",
            "--out",
            s(tmp.path())
        ])
        .status
        .code(),
        Some(2)
    );
    let missing = tmp.path().join("missing");
    assert_eq!(
        dagpost(&["train", "--out", s(&missing)]).status.code(),
        Some(3)
    );

    let cfg = write_config(
        tmp.path(),
        "six.json",
        &json!({ "dataset": { "d": 6, "n": 30, "n_test": 0 } }),
    );
    let six = tmp.path().join("six");
    ok(&["gen", "--config", s(&cfg), "--out", s(&six)]);
    assert_eq!(
        dagpost(&["true-posterior", "--out", s(&six)]).status.code(),
        Some(2)
    );

    let huge = tmp.path().join("huge.csv");
    fs::write(&huge, "a,b\n1e300,-1e300\n-1e300,1e300\n2e300,1e300\n").unwrap();
    assert_eq!(
        dagpost(&["true-posterior", "--data", s(&huge), "--out", s(tmp.path())])
            .status
            .code(),
        Some(4)
    );
}

#[test]
fn manifest_replays_to_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "cfg.json",
        &json!({ "dataset": { "d": 3, "n": 80, "n_test": 20 }, "train": tiny_train(), "preset": "linear-er-5" }),
    );
    let a = tmp.path().join("a");
    ok(&["gen", "--config", s(&cfg), "--out", s(&a), "--seed", "11"]);
    ok(&["train", "--config", s(&cfg), "--out", s(&a), "--seed", "11"]);
    ok(&["eval", "--config", s(&cfg), "--out", s(&a), "--seed", "11"]);

    let manifest = a.join("manifest-train.json");
    let b = tmp.path().join("b");
    ok(&["gen", "--config", s(&manifest), "--out", s(&b)]);
    ok(&["train", "--config", s(&manifest), "--out", s(&b)]);
    ok(&["eval", "--config", s(&manifest), "--out", s(&b)]);
    for f in ["data.csv", "particles.json", "metrics.json"] {
        assert_eq!(
            fs::read_to_string(a.join(f)).unwrap(),
            fs::read_to_string(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn sweep_runs_grid_and_records_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let base = json!({ "dataset": { "d": 3, "n": 60, "n_test": 20 }, "train": tiny_train() });
    let empty = write_config(tmp.path(), "empty.json", &json!({ "base": base }));
    let one = tmp.path().join("one");
    ok(&["sweep", "--config", s(&empty), "--out", s(&one)]);
    let mut rdr = csv::Reader::from_path(one.join("sweep.csv")).unwrap();
    assert_eq!(rdr.records().count(), 1);

    let grid = write_config(
        tmp.path(),
        "grid.json",
        &json!({ "base": base, "grid": { "chains": [1, 2], "alpha": [0.01, -1.0] } }),
    );
    let dir = tmp.path().join("grid");
    ok(&["sweep", "--config", s(&grid), "--out", s(&dir)]);
    let mut rdr = csv::Reader::from_path(dir.join("sweep.csv")).unwrap();
    let header = rdr.headers().unwrap().clone();
    assert_eq!(&header[1], "alpha");
    assert_eq!(&header[2], "chains");
    let rows: Vec<_> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    let failed: Vec<&str> = rows.iter().map(|r| r.get(4).unwrap()).collect();
    assert_eq!(failed, vec!["0", "0", "1", "1"]);
    assert!(dir.join("point-002").join("error.json").exists());
    assert!(dir.join("point-001").join("metrics.json").exists());
    let seed_a = read_json::<ParticlesFile>(&dir.join("point-000/particles.json"))
        .unwrap()
        .config
        .seed;
    let seed_b = read_json::<ParticlesFile>(&dir.join("point-001/particles.json"))
        .unwrap()
        .config
        .seed;
    assert_ne!(seed_a, seed_b);
}
