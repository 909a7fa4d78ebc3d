use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use walkdir::WalkDir;

const SMALL: &str = r#"
[synth]
n_genes = 12
n_patients = 24
n_knockdown_genes = 3
n_teachers_per_gene = 2
density = 0.3

[estimate]
runs = 3
max_iters = 50

[pretrain]
epochs = 2
batch_size = 4
patience = 5

[pretrain.encoder]
layers = 1
hidden_dim = 8
heads = 2

[finetune]
epochs = 3
folds = 3
hidden = 8
node_patients = 2

[evaluate]
undersample_seeds = 2

[sweep]
learning_rates = [1e-3]
batch_sizes = [4]
taus = [0.5, 1.0]
"#;

fn supgcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_supgcl"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .env_remove("SUPGCL_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn error_record(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("error record on stderr");
    serde_json::from_str(line).expect("error record is JSON")
}

/// Relative path to file bytes for every file below `dir`.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    WalkDir::new(dir)
        .into_iter()
        .map(Result::unwrap)
        .filter(|e| e.file_type().is_file())
        .map(|e| (e.path().strip_prefix(dir).unwrap().to_path_buf(), fs::read(e.path()).unwrap()))
        .collect()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("run.toml"), SMALL).unwrap();
        let f = Self { dir };
        ok(supgcl(&["synth", "--config", p(&f.config()), "--seed", "4", "--out", p(&f.data())]));
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self) -> PathBuf {
        self.path("run.toml")
    }

    fn data(&self) -> PathBuf {
        self.path("data")
    }
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let f = Fixture::new();
    let again = f.path("again");
    ok(supgcl(&["synth", "--config", p(&f.config()), "--seed", "4", "--out", p(&again)]));
    let a = snapshot(&f.data());
    assert!(a.contains_key(Path::new("manifest.json")));
    assert!(a.contains_key(Path::new("teachers.json")));
    assert_eq!(a, snapshot(&again));

    let other = f.path("other");
    ok(supgcl(&["synth", "--config", p(&f.config()), "--seed", "5", "--out", p(&other)]));
    assert_ne!(a[Path::new("expression.tsv")], snapshot(&other)[Path::new("expression.tsv")]);
}

#[test]
fn pretrain_and_evaluate_are_byte_identical_across_runs() {
    let f = Fixture::new();
    let cfg = f.config();
    for run in ["p1", "p2"] {
        ok(supgcl(&["pretrain", "--config", p(&cfg), "--data", p(&f.data()), "--out", p(&f.path(run))]));
    }
    let a = snapshot(&f.path("p1"));
    assert!(a.contains_key(Path::new("encoder.json")));
    assert!(a.contains_key(Path::new("train_log.jsonl")));
    assert_eq!(a, snapshot(&f.path("p2")));

    let ckpt = f.path("p1").join("encoder.json");
    for run in ["e1", "e2"] {
        ok(supgcl(&[
            "evaluate",
            "--config",
            p(&cfg),
            "--data",
            p(&f.data()),
            "--checkpoint",
            p(&ckpt),
            "--out",
            p(&f.path(run)),
        ]));
    }
    let e = snapshot(&f.path("e1"));
    assert_eq!(e, snapshot(&f.path("e2")));
    let summary = String::from_utf8(e[Path::new("summary.csv")].clone()).unwrap();
    for task in ["bp,", "cc,", "rel,", "hazard,", "subtype,"] {
        assert!(summary.contains(task), "{summary}");
    }
}

#[test]
fn manifest_records_inputs_outputs_and_fixed_timestamps() {
    let f = Fixture::new();
    let out = f.path("pt");
    ok(supgcl(&["pretrain", "--config", p(&f.config()), "--data", p(&f.data()), "--out", p(&out)]));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "pretrain");
    assert_eq!(m["started_unix"], 1_700_000_000u64);
    assert_eq!(m["finished_unix"], 1_700_000_000u64);
    let inputs: Vec<&str> = m["inputs"].as_array().unwrap().iter().map(|a| a["path"].as_str().unwrap()).collect();
    assert!(inputs.iter().any(|s| s.ends_with("teachers.json")));
    assert!(inputs.iter().any(|s| s.contains("patients")));
    let outputs: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|a| a["path"].as_str().unwrap()).collect();
    assert_eq!(outputs, vec!["encoder.json", "train_log.jsonl"]);
    assert_eq!(m["config"]["pretrain"]["epochs"], 2);
}

#[test]
fn pretrain_without_teacher_manifest_exits_with_missing_input() {
    let f = Fixture::new();
    fs::remove_file(f.data().join("teachers.json")).unwrap();
    let out = f.path("pt");
    let res = supgcl(&["pretrain", "--config", p(&f.config()), "--data", p(&f.data()), "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(3));
    assert_eq!(error_record(&res)["error"], "missing_input");
    assert!(!out.join("encoder.json").exists());
    assert!(!out.exists());
}

#[test]
fn bad_config_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[pretrain]\nepochz = 1\n").unwrap();
    let res = supgcl(&["synth", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(res.status.code(), Some(2));
    let rec = error_record(&res);
    assert_eq!(rec["error"], "config");
    assert_eq!(rec["exit_code"], 2);

    fs::write(&cfg, "[pretrain]\nepochs = 0\n").unwrap();
    let res = supgcl(&["synth", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn missing_config_file_is_missing_input() {
    let dir = tempfile::tempdir().unwrap();
    let res = supgcl(&["synth", "--config", p(&dir.path().join("nope.toml")), "--out", p(dir.path())]);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn verify_passes_and_reports_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let res = ok(supgcl(&["verify", "--out", p(&out)]));
    let text = String::from_utf8(res.stdout).unwrap();
    assert!(text.lines().count() >= 8, "{text}");
    assert!(text.lines().all(|l| l.starts_with("PASS ")), "{text}");
    assert!(out.join("verify.json").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn estimate_embed_finetune_and_sweep_write_outputs() {
    let f = Fixture::new();
    let cfg = f.config();
    let est = f.path("est");
    ok(supgcl(&[
        "estimate",
        "--config",
        p(&cfg),
        "--expression",
        p(&f.data().join("expression.tsv")),
        "--out",
        p(&est),
    ]));
    let net: serde_json::Value = serde_json::from_slice(&fs::read(est.join("network.json")).unwrap()).unwrap();
    assert_eq!(net["genes"].as_array().unwrap().len(), 12);
    assert_eq!(fs::read_dir(est.join("patients")).unwrap().count(), 24);

    let pt = f.path("pt");
    ok(supgcl(&[
        "pretrain",
        "--config",
        p(&cfg),
        "--data",
        p(&f.data()),
        "--objective",
        "grace",
        "--out",
        p(&pt),
    ]));
    let ckpt = pt.join("encoder.json");

    let emb = f.path("emb");
    ok(supgcl(&["embed", "--config", p(&cfg), "--data", p(&f.data()), "--checkpoint", p(&ckpt), "--out", p(&emb)]));
    let e: serde_json::Value = serde_json::from_slice(&fs::read(emb.join("embeddings.json")).unwrap()).unwrap();
    assert_eq!(e["records"].as_array().unwrap().len(), 24);
    assert_eq!(e["records"][0]["nodes"].as_array().unwrap().len(), 12);

    let ft = f.path("ft");
    ok(supgcl(&["finetune", "--config", p(&cfg), "--data", p(&f.data()), "--task", "hazard", "--out", p(&ft)]));
    let r: serde_json::Value = serde_json::from_slice(&fs::read(ft.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["task"], "hazard");
    assert_eq!(r["folds"].as_array().unwrap().len(), 3);

    let sw = f.path("sw");
    ok(supgcl(&["sweep", "--config", p(&cfg), "--data", p(&f.data()), "--out", p(&sw)]));
    let csv = fs::read_to_string(sw.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(sw.join("best_encoder.json").exists());
}

#[test]
fn data_root_comes_from_the_environment() {
    let f = Fixture::new();
    let out = f.path("emb");
    let res = Command::new(env!("CARGO_BIN_EXE_supgcl"))
        .args(["finetune", "--config", p(&f.config()), "--task", "bp", "--out", p(&out)])
        .env("SUPGCL_DATA_ROOT", f.data())
        .output()
        .unwrap();
    ok(res);
    assert!(out.join("report.json").exists());
}

#[test]
fn unknown_task_is_a_usage_error() {
    let res = supgcl(&["finetune", "--data", ".", "--task", "nope", "--out", "x"]);
    assert_eq!(res.status.code(), Some(2));
}
