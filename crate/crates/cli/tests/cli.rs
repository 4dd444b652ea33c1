use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_factorlens");

fn run(args: &[&str]) -> Output {
    run_env(args, &[])
}

fn run_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("FACTORLENS_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn ok(o: Output) -> String {
    assert_eq!(code(&o), 0, "stdout:\n{}\nstderr:\n{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))).unwrap()
}

/// Small cohort so a full pipeline runs in seconds.
fn small_config(seed: Option<u64>) -> Value {
    let mut cohort = json!({
        "n_subjects_per_cohort": [4, 2, 2],
        "trials_per_subject": 12
    });
    if let Some(s) = seed {
        cohort["master_seed"] = json!(s);
    }
    json!({
        "data": {"cohort": cohort, "n_train": 64, "n_test": 32},
        "train": {"epochs": 2, "batch_size": 16, "k_train": 2, "k_eval": 4}
    })
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self, name: &str, v: &Value) -> PathBuf {
        let p = self.p(name);
        std::fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
        p
    }

    fn gen(&self, name: &str, seed: u64) -> PathBuf {
        let cfg = self.config(&format!("{name}.json"), &small_config(Some(seed)));
        let out = self.p(name);
        ok(run(&["gen", "--config", path(&cfg), "--out", path(&out)]));
        out
    }

    fn train(&self, data: &Path, name: &str, framework: &str, extra: &[&str]) -> PathBuf {
        let cfg = self.config("train.json", &small_config(None));
        let out = self.p(name);
        let mut args = vec!["train", "--config", path(&cfg), "--data", path(data), "--out", path(&out), "--framework", framework];
        args.extend_from_slice(extra);
        ok(run(&args));
        out
    }
}

fn checkpoint_checksum(run: &Path, label: &str) -> String {
    let r = read(&run.join("run.json"));
    let c = r["checkpoints"].as_array().unwrap().iter().find(|c| c["label"] == label).expect("checkpoint recorded");
    c["checksum"].as_str().unwrap().to_string()
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let ws = Workspace::new();
    let data = ws.gen("data", 3);
    for f in ["config.json", "train/manifest.json", "train/x.f32", "test/y.u8"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let run1 = ws.train(&data, "ccvae", "ccvae", &[]);
    let record = read(&run1.join("run.json"));
    assert_eq!(record["status"]["state"], "completed");
    assert_eq!(record["history"].as_array().unwrap().len(), 2);
    assert!(run1.join("history.csv").exists());
    assert!(run1.join("experiment.json").exists());
    assert!(!run1.join(".lock").exists());

    let out = ok(run(&["eval", "--run", path(&run1), "--data", path(&data)]));
    assert!(out.contains("accuracy"));
    let metrics = read(&run1.join("eval/metrics.json"));
    let acc = metrics["metrics"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(metrics["metrics"]["tie_break"], "lowest-index");
    assert!(metrics["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    let confusion = read(&run1.join("eval/confusion.json"));
    assert_eq!(confusion["matrix"]["values"].as_array().unwrap().len(), 3);
    assert!(run1.join("eval/cloud.csv").exists());

    ok(run(&["intervene", "--run", path(&run1), "--n", "20", "--plot"]));
    let scen = run1.join("interventions/schizophrenia_hallucinations=0_listening=1");
    for f in ["diff.f32", "diff.csv", "effect.json", "heatmap.png"] {
        assert!(scen.join(f).exists(), "{f}");
    }
    assert_eq!(std::fs::metadata(scen.join("diff.f32")).unwrap().len(), 61 * 61 * 4);
    let single = ws.p("single");
    ok(run(&[
        "intervene", "--run", path(&run1), "--label", "hallucinations", "--fixed", "listening=0,schizophrenia=1", "--n", "10",
        "--out", path(&single),
    ]));
    assert_eq!(read(&single.join("effect.json"))["n_pairs"], 10);

    let run2 = ws.train(&data, "cvae", "cvae", &["--epochs", "1"]);
    ok(run(&["eval", "--run", path(&run2), "--data", path(&data)]));
    let table = ws.p("report.csv");
    let out = ok(run(&["report", path(&run1), path(&run2), "--out", path(&table)]));
    assert!(out.contains("ccvae") && out.contains("cvae"));
    let csv = std::fs::read_to_string(&table).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(ws.p("report.json").exists());
}

#[test]
fn reruns_are_bit_identical() {
    let ws = Workspace::new();
    let a = ws.gen("a", 5);
    let b = ws.gen("b", 5);
    let ma = read(&a.join("train/manifest.json"));
    let mb = read(&b.join("train/manifest.json"));
    assert_eq!(ma["checksums"], mb["checksums"]);

    let r1 = ws.train(&a, "r1", "vae_cls", &["--epochs", "1"]);
    let r2 = ws.train(&b, "r2", "vae_cls", &["--epochs", "1"]);
    assert_eq!(checkpoint_checksum(&r1, "final"), checkpoint_checksum(&r2, "final"));
    assert_eq!(read(&r1.join("run.json"))["run_id"], read(&r2.join("run.json"))["run_id"]);

    ok(run(&["eval", "--run", path(&r1), "--data", path(&a)]));
    let first = read(&r1.join("eval/metrics.json"));
    ok(run(&["eval", "--run", path(&r1), "--data", path(&a)]));
    assert_eq!(first, read(&r1.join("eval/metrics.json")));
}

#[test]
fn zero_epochs_saves_only_the_initial_checkpoint() {
    let ws = Workspace::new();
    let data = ws.gen("data", 1);
    let run1 = ws.train(&data, "r", "ccvae", &["--epochs", "0"]);
    let r = read(&run1.join("run.json"));
    let labels: Vec<&str> = r["checkpoints"].as_array().unwrap().iter().map(|c| c["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["initial"]);
    assert!(r["history"].as_array().unwrap().is_empty());
    ok(run(&["eval", "--run", path(&run1), "--data", path(&data), "--checkpoint", "initial"]));
}

#[test]
fn intervention_on_vae_cls_is_unsupported() {
    let ws = Workspace::new();
    let data = ws.gen("data", 2);
    let r = ws.train(&data, "r", "vae_cls", &["--epochs", "1"]);
    assert_eq!(code(&run(&["intervene", "--run", path(&r), "--n", "5"])), 5);
}

#[test]
fn configuration_errors_exit_2() {
    let ws = Workspace::new();
    let data = ws.gen("data", 2);
    let r = ws.train(&data, "r", "ccvae", &["--epochs", "1"]);
    // Hallucinations without schizophrenia is not a valid label vector.
    let o = run(&["intervene", "--run", path(&r), "--label", "hallucinations", "--fixed", "listening=1,schizophrenia=0"]);
    assert_eq!(code(&o), 2);
    let o = run(&["intervene", "--run", path(&r), "--label", "schizophrenia", "--fixed", "listening=1"]);
    assert_eq!(code(&o), 2);

    let mut bad = small_config(None);
    bad["train"]["learning_rat"] = json!(0.1);
    let cfg = ws.config("bad.json", &bad);
    assert_eq!(code(&run(&["config", "--config", path(&cfg)])), 2);
    let o = run(&["train", "--config", path(&cfg), "--data", path(&data), "--out", path(&ws.p("x"))]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&run(&["train", "--data", path(&data), "--out", path(&ws.p("y")), "--framework", "nope"])), 2);
    assert_eq!(code(&run(&["report", path(&r)])), 2, "report before eval");
}

#[test]
fn mixed_datasets_are_refused_by_report() {
    let ws = Workspace::new();
    let a = ws.gen("a", 1);
    let b = ws.gen("b", 2);
    let ra = ws.train(&a, "ra", "vae_cls", &["--epochs", "1"]);
    let rb = ws.train(&b, "rb", "vae_cls", &["--epochs", "1"]);
    ok(run(&["eval", "--run", path(&ra), "--data", path(&a)]));
    ok(run(&["eval", "--run", path(&rb), "--data", path(&b)]));
    assert_eq!(code(&run(&["report", path(&ra), path(&rb)])), 4);
}

#[test]
fn mismatched_checkpoint_is_incompatible() {
    let ws = Workspace::new();
    let data = ws.gen("data", 4);
    let r = ws.train(&data, "r", "ccvae", &["--epochs", "0"]);
    let path_json = r.join("run.json");
    let mut record = read(&path_json);
    record["framework"] = json!("cvae");
    std::fs::write(&path_json, serde_json::to_vec(&record).unwrap()).unwrap();
    let o = run(&["eval", "--run", path(&r), "--data", path(&data), "--checkpoint", "initial"]);
    assert_eq!(code(&o), 4);

    let mut record = read(&path_json);
    record["framework"] = json!("ccvae");
    record["config"]["architecture"]["channels"] = json!([1, 4, 8, 8, 4]);
    std::fs::write(&path_json, serde_json::to_vec(&record).unwrap()).unwrap();
    let o = run(&["eval", "--run", path(&r), "--data", path(&data), "--checkpoint", "initial"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn seed_falls_back_to_the_environment() {
    let ws = Workspace::new();
    let cfg = ws.config("c.json", &small_config(None));
    let out = ws.p("env");
    ok(run_env(&["gen", "--config", path(&cfg), "--out", path(&out)], &[("FACTORLENS_SEED", "11")]));
    assert_eq!(read(&out.join("train/manifest.json"))["seed"], 11);

    // Values in the file win over the environment; flags win over both.
    let cfg = ws.config("c2.json", &small_config(Some(3)));
    let out = ws.p("file");
    ok(run_env(&["gen", "--config", path(&cfg), "--out", path(&out)], &[("FACTORLENS_SEED", "11")]));
    assert_eq!(read(&out.join("train/manifest.json"))["seed"], 3);
    let out = ws.p("flag");
    ok(run_env(&["gen", "--config", path(&cfg), "--out", path(&out), "--seed", "8"], &[("FACTORLENS_SEED", "11")]));
    assert_eq!(read(&out.join("train/manifest.json"))["seed"], 8);

    let o = run_env(&["config"], &[("FACTORLENS_SEED", "x")]);
    assert_eq!(code(&o), 2);
    let printed: Value = serde_json::from_str(&ok(run_env(&["config"], &[("FACTORLENS_SEED", "6")]))).unwrap();
    assert_eq!(printed["train"]["seed"], 6);
    assert_eq!(printed["analysis"]["seed"], 6);
}

#[test]
fn non_finite_data_is_a_numerical_failure() {
    let ws = Workspace::new();
    let data = ws.gen("data", 6);
    let train_dir = data.join("train");
    let mut d = factorlens::synthdata::load_dataset(&train_dir).unwrap();
    let effects = factorlens::synthdata::load_effects(&train_dir).unwrap();
    d.x[100] = f32::NAN;
    factorlens::synthdata::save_dataset(&d, &effects, &train_dir).unwrap();

    let cfg = ws.config("t.json", &small_config(None));
    let out = ws.p("r");
    let o = run(&["train", "--config", path(&cfg), "--data", path(&data), "--out", path(&out)]);
    assert_eq!(code(&o), 3);
    let r = read(&out.join("run.json"));
    assert_eq!(r["status"]["state"], "numerical_failure");
    assert!(r["checkpoints"].as_array().unwrap().iter().any(|c| c["label"] == "last_good"));
    assert_eq!(code(&run(&["eval", "--run", path(&out), "--data", path(&data)])), 3);
}

#[test]
fn tampered_data_fails_checksum() {
    let ws = Workspace::new();
    let data = ws.gen("data", 7);
    let x = data.join("test/x.f32");
    let mut bytes = std::fs::read(&x).unwrap();
    bytes[10] ^= 1;
    std::fs::write(&x, bytes).unwrap();
    let cfg = ws.config("t.json", &small_config(None));
    let o = run(&["train", "--config", path(&cfg), "--data", path(&data), "--out", path(&ws.p("r"))]);
    assert_eq!(code(&o), 4);
}

#[test]
fn locked_run_directory_is_refused() {
    let ws = Workspace::new();
    let data = ws.gen("data", 8);
    let out = ws.p("r");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join(".lock"), "1").unwrap();
    let cfg = ws.config("t.json", &small_config(None));
    let o = run(&["train", "--config", path(&cfg), "--data", path(&data), "--out", path(&out)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn version_and_usage() {
    let out = ok(run(&["--version"]));
    assert!(out.contains(env!("CARGO_PKG_VERSION")));
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn single_pair_intervention_is_seeded() {
    let ws = Workspace::new();
    let data = ws.gen("data", 2);
    let r = ws.train(&data, "ccvae", "ccvae", &["--epochs", "1"]);
    let once = |name: &str, seed: &str| {
        let out = ws.p(name);
        ok(run(&[
            "intervene", "--run", path(&r), "--label", "schizophrenia", "--fixed", "listening=1,hallucinations=0", "--n", "1",
            "--seed", seed, "--out", path(&out),
        ]));
        std::fs::read(out.join("diff.f32")).unwrap()
    };
    let (a, b, c) = (once("a", "4"), once("b", "4"), once("c", "5"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn histories_share_one_layout() {
    let ws = Workspace::new();
    let data = ws.gen("data", 6);
    let headers: Vec<String> = ["ccvae", "cvae", "vae_cls"]
        .iter()
        .map(|fw| {
            let r = ws.train(&data, fw, fw, &[]);
            let csv = std::fs::read_to_string(r.join("history.csv")).unwrap();
            assert_eq!(csv.lines().count(), 3, "{fw}: header plus one row per epoch");
            csv.lines().next().unwrap().to_string()
        })
        .collect();
    assert!(headers.iter().all(|h| *h == headers[0]), "{headers:?}");
    for col in ["epoch", "train_total", "test_accuracy"] {
        assert!(headers[0].split(',').any(|c| c == col), "missing {col} in {}", headers[0]);
    }
}
