use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use iacd_core::classifiers::{evaluate, ClassifierBundle};
use iacd_core::signature::{SignatureDatabase, SIGNATURE_DIM};
use tempfile::TempDir;

fn iacd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iacd")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = iacd(args);
    assert!(
        out.status.success(),
        "iacd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Run {
    _dir: TempDir,
    root: PathBuf,
}

impl Run {
    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn pair(&self, corpus: &str, scenario: &str) -> (PathBuf, PathBuf) {
        let dir = self.path(&format!("corpus/traces/{corpus}/{scenario}"));
        (dir.join("0000.client.trace"), dir.join("0000.server.trace"))
    }
}

fn run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let root = dir.path().to_path_buf();
        ok(&[
            "synth",
            "--preset",
            "smoke",
            "--seed",
            "3",
            "--out",
            s(&root.join("corpus")),
        ]);
        ok(&[
            "train",
            "--db",
            s(&root.join("corpus/db/train_lpd.jsonl")),
            "--db",
            s(&root.join("corpus/db/train_cfd.jsonl")),
            "--features",
            "10,25",
            "--seed",
            "5",
            "--out",
            s(&root.join("bundle.json")),
        ]);
        Run {
            root: root.clone(),
            _dir: dir,
        }
    })
}

#[test]
fn synth_writes_manifest_databases_and_traces() {
    let r = run();
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(r.path("corpus/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["total_samples"], 38);
    assert_eq!(manifest["corpora"]["train_cfd"]["signatures"], 18);
    assert_eq!(manifest["corpora"]["train_lpd"]["classes"]["LINK_FAULTY"], 10);
    let db = SignatureDatabase::from_jsonl(&fs::read_to_string(r.path("corpus/db/train_cfd.jsonl")).unwrap()).unwrap();
    assert_eq!(db.len(), 18);
    let (c, sv) = r.pair("train_cfd", "AIMD_STD-healthy");
    assert!(c.exists() && sv.exists());
    assert!(r.path("corpus/matrix.toml").exists());
}

#[test]
fn synth_is_deterministic_and_matrix_reproduces_preset() {
    let r = run();
    let dir = TempDir::new().unwrap();
    let again = dir.path().join("again");
    ok(&["synth", "--preset", "smoke", "--seed", "3", "--out", s(&again)]);
    for f in [
        "manifest.json",
        "matrix.toml",
        "db/train_lpd.jsonl",
        "db/train_cfd.jsonl",
    ] {
        assert_eq!(
            fs::read(r.path("corpus").join(f)).unwrap(),
            fs::read(again.join(f)).unwrap(),
            "{f}"
        );
    }
    let from_matrix = dir.path().join("m");
    ok(&[
        "synth",
        "--matrix",
        s(&r.path("corpus/matrix.toml")),
        "--out",
        s(&from_matrix),
        "--no-traces",
    ]);
    assert_eq!(
        fs::read(again.join("db/train_cfd.jsonl")).unwrap(),
        fs::read(from_matrix.join("db/train_cfd.jsonl")).unwrap()
    );
    assert!(!from_matrix.join("traces").exists());
}

#[test]
fn synth_rejects_empty_matrix_and_unknown_preset() {
    let dir = TempDir::new().unwrap();
    let m = dir.path().join("empty.toml");
    fs::write(&m, "").unwrap();
    let out = iacd(&["synth", "--matrix", s(&m), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no scenarios"));
    let out = iacd(&["synth", "--preset", "nope", "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_is_byte_identical_and_has_four_modules() {
    let r = run();
    let dir = TempDir::new().unwrap();
    let b2 = dir.path().join("b.json");
    ok(&[
        "train",
        "--db",
        s(&r.path("corpus/db/train_lpd.jsonl")),
        "--db",
        s(&r.path("corpus/db/train_cfd.jsonl")),
        "--features",
        "10,25",
        "--seed",
        "5",
        "--out",
        s(&b2),
    ]);
    let text = fs::read_to_string(r.path("bundle.json")).unwrap();
    assert_eq!(text, fs::read_to_string(&b2).unwrap());
    let bundle = ClassifierBundle::from_json(&text).unwrap();
    assert_eq!(bundle.cf_modules.len(), 4);
}

#[test]
fn train_overrides_apply() {
    let r = run();
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("b.json");
    ok(&[
        "train",
        "--db",
        s(&r.path("corpus/db/train_cfd.jsonl")),
        "--db",
        s(&r.path("corpus/db/train_lpd.jsonl")),
        "--features",
        "lpd=8",
        "--features",
        "3=6",
        "--kernel",
        "linear",
        "--kernel",
        "2=poly2",
        "--faults",
        "2,3",
        "--folds",
        "2",
        "--out",
        s(&out),
    ]);
    let b = ClassifierBundle::from_json(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(b.lpd.q(), 8);
    assert_eq!(b.lpd.svm.kernel.to_string(), "linear");
    assert_eq!(b.lpd.selection.k_folds, 2);
    assert_eq!(b.cf_modules.len(), 2);
    assert_eq!(b.cf_modules[0].model.svm.kernel.to_string(), "poly2");
    assert_eq!(b.cf_modules[1].model.q(), 6);
}

#[test]
fn train_without_healthy_clients_fails() {
    let r = run();
    let dir = TempDir::new().unwrap();
    let db = SignatureDatabase::from_jsonl(&fs::read_to_string(r.path("corpus/db/train_cfd.jsonl")).unwrap()).unwrap();
    let no_cf0 = db.filter(|l| l != iacd_core::signature::ClassLabel::Cf(0)).unwrap();
    let p = dir.path().join("db.jsonl");
    fs::write(&p, no_cf0.to_jsonl()).unwrap();
    let out = iacd(&[
        "train",
        "--db",
        s(&p),
        "--db",
        s(&r.path("corpus/db/train_lpd.jsonl")),
        "--out",
        s(&dir.path().join("b.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("healthy"));
}

#[test]
fn diagnose_reports() {
    let r = run();
    let model = r.path("bundle.json");
    let (c, sv) = r.pair("train_cfd", "AIMD_STD-healthy");
    let text = ok(&["diagnose", "--model", s(&model), "--client", s(&c), "--server", s(&sv)]);
    assert_eq!(text.lines().next(), Some("CLIENT_HEALTHY"));

    let (c, sv) = r.pair("train_cfd", "AIMD_STD-rwbuf-8mss");
    let text = ok(&["diagnose", "--model", s(&model), "--client", s(&c), "--server", s(&sv)]);
    let first = text.lines().next().unwrap();
    assert!(
        first.starts_with("CLIENT_FAULTS ") && first.ends_with("RBuf,WBuf"),
        "{first}"
    );

    let (c, sv) = r.pair("train_lpd", "AIMD_STD-loss-4pct");
    let json = ok(&[
        "diagnose",
        "--model",
        s(&model),
        "--client",
        s(&c),
        "--server",
        s(&sv),
        "--json",
    ]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["overall"]["kind"], "LINK_PROBLEM");
    assert_eq!(v["modules"].as_array().unwrap().len(), 0);
    let json = ok(&[
        "diagnose",
        "--model",
        s(&model),
        "--client",
        s(&c),
        "--server",
        s(&sv),
        "--json",
        "--run-both",
    ]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["modules"].as_array().unwrap().len(), 4);

    let out = iacd(&[
        "diagnose",
        "--model",
        s(&model),
        "--client",
        "/nonexistent",
        "--server",
        s(&sv),
    ]);
    assert_eq!(out.status.code(), Some(1));
    // Client and server swapped: the capture points do not match their roles.
    let out = iacd(&["diagnose", "--model", s(&model), "--client", s(&sv), "--server", s(&c)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn evaluate_matches_library() {
    let r = run();
    let dir = TempDir::new().unwrap();
    let db_path = r.path("corpus/db/train_cfd.jsonl");
    let stdout = ok(&[
        "evaluate",
        "--model",
        s(&r.path("bundle.json")),
        "--db",
        s(&db_path),
        "--out",
        s(dir.path()),
    ]);
    let bundle = ClassifierBundle::from_json(&fs::read_to_string(r.path("bundle.json")).unwrap()).unwrap();
    let db = SignatureDatabase::from_jsonl(&fs::read_to_string(&db_path).unwrap()).unwrap();
    let m = evaluate(&bundle, &db).unwrap();
    assert_eq!(stdout, m.accuracy_csv());
    assert_eq!(
        fs::read_to_string(dir.path().join("accuracy.csv")).unwrap(),
        m.accuracy_csv()
    );
    assert_eq!(
        fs::read_to_string(dir.path().join("confusion.csv")).unwrap(),
        m.confusion_csv()
    );
    assert_eq!(
        fs::read_to_string(dir.path().join("metrics.json")).unwrap(),
        m.to_json()
    );
    assert_eq!(stdout.lines().count(), 7);

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = iacd(&["evaluate", "--model", s(&r.path("bundle.json")), "--db", s(&empty)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn extract_builds_the_same_signature_as_synth() {
    let r = run();
    let dir = TempDir::new().unwrap();
    let db_path = dir.path().join("new.jsonl");
    for scenario in ["AIMD_STD-healthy", "AIMD_STD-sack-off"] {
        let (c, sv) = r.pair("train_cfd", scenario);
        let label = if scenario.ends_with("healthy") { "CF0" } else { "CF1" };
        ok(&[
            "extract",
            "--client",
            s(&c),
            "--server",
            s(&sv),
            "--label",
            label,
            "--out",
            s(&db_path),
        ]);
    }
    let mine = SignatureDatabase::from_jsonl(&fs::read_to_string(&db_path).unwrap()).unwrap();
    assert_eq!(mine.len(), 2);
    let synth =
        SignatureDatabase::from_jsonl(&fs::read_to_string(r.path("corpus/db/train_cfd.jsonl")).unwrap()).unwrap();
    for sig in mine.signatures() {
        assert!(synth
            .signatures()
            .iter()
            .any(|t| t.features == sig.features && t.label == sig.label));
    }
    let out = iacd(&[
        "extract", "--client", "a", "--server", "b", "--label", "CFX", "--out", "c",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn export_matrix_shapes() {
    let r = run();
    let dir = TempDir::new().unwrap();
    let db_path = r.path("corpus/db/train_cfd.jsonl");
    let full = dir.path().join("full.csv");
    ok(&["export-matrix", "--db", s(&db_path), "--out", s(&full)]);
    let text = fs::read_to_string(&full).unwrap();
    assert_eq!(text.lines().count(), 19);
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), SIGNATURE_DIM + 1);
    assert_eq!(header[1..], iacd_core::signature::feature_names()[..]);

    let reduced = dir.path().join("reduced.csv");
    ok(&[
        "export-matrix",
        "--db",
        s(&db_path),
        "--out",
        s(&reduced),
        "--drop-null",
    ]);
    let db = SignatureDatabase::from_jsonl(&fs::read_to_string(&db_path).unwrap()).unwrap();
    let retained = iacd_core::preprocess::fit_scaler(&db).unwrap().retained();
    let first = fs::read_to_string(&reduced).unwrap();
    assert_eq!(first.lines().next().unwrap().split(',').count(), retained + 1);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(iacd(&[]).status.code(), Some(2));
    assert_eq!(iacd(&["train", "--out", "x"]).status.code(), Some(2));
    assert_eq!(
        iacd(&["synth", "--matrix", "m", "--preset", "smoke", "--out", "o"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(iacd(&["frobnicate"]).status.code(), Some(2));
}
