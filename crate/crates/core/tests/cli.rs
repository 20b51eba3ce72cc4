use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_intent-induce"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn intent-induce")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn fixture(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.json");
    std::fs::write(
        &spec,
        r#"{"dim": 6, "intents": 4, "dialogues_per_intent": 10, "training_domains": 2,
            "training_intents": 3, "training_per_intent": 15}"#,
    )
    .unwrap();
    let out = dir.join("corpus");
    let o = run(&["gen-fixture", "--config", p(&spec), "--seed", "5", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn write_config(dir: &Path, patch: Value) -> PathBuf {
    let base = dir.join("corpus/pipeline.json");
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(&base).unwrap()).unwrap();
    for (k, v) in patch.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = dir.join("corpus/patched.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn induce_then_evaluate_agrees_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture(dir.path());
    let report = stdout_json(&run(&["induce", "--config", p(&corpus.join("pipeline.json"))]));
    let run_dir = corpus.join("run");
    for f in ["schema.jsonl", "k_scores.csv", "classifier.json", "predictions.jsonl", "report.json", "timings.json"] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }
    let eval = stdout_json(&run(&[
        "evaluate",
        "--predictions",
        p(&run_dir.join("predictions.jsonl")),
        "--references",
        p(&corpus.join("test.jsonl")),
    ]));
    assert_eq!(eval["acc"], report["test_metrics"]["acc"]);
    assert_eq!(eval["nmi"], report["test_metrics"]["nmi"]);
}

#[test]
fn evaluate_ignores_prediction_order() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture(dir.path());
    stdout_json(&run(&["induce", "--config", p(&corpus.join("pipeline.json"))]));
    let preds = corpus.join("run/predictions.jsonl");
    let text = std::fs::read_to_string(&preds).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.reverse();
    let shuffled = dir.path().join("reversed.jsonl");
    std::fs::write(&shuffled, lines.join("\n") + "\n").unwrap();
    let refs = corpus.join("test.jsonl");
    let a = stdout_json(&run(&["evaluate", "--predictions", p(&preds), "--references", p(&refs)]));
    let b = stdout_json(&run(&["evaluate", "--predictions", p(&shuffled), "--references", p(&refs)]));
    assert_eq!(a["acc"], b["acc"]);
    assert_eq!(a["f1"], b["f1"]);
    assert_eq!(a["ari"], b["ari"]);
}

#[test]
fn seeds_reproduce_schema() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture(dir.path());
    let cfg = p(&corpus.join("pipeline.json")).to_string();
    stdout_json(&run(&["induce", "--config", &cfg, "--seed", "11"]));
    let first = std::fs::read(corpus.join("run/schema.jsonl")).unwrap();
    stdout_json(&run(&["induce", "--config", &cfg, "--seed", "11"]));
    assert_eq!(first, std::fs::read(corpus.join("run/schema.jsonl")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture(dir.path());

    let missing = run(&["induce", "--config", p(&dir.path().join("nope.json"))]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));

    let no_views = write_config(dir.path(), serde_json::json!({"view_mask": "FFF"}));
    assert_eq!(run(&["induce", "--config", p(&no_views)]).status.code(), Some(3));

    let no_ckpt = write_config(dir.path(), serde_json::json!({"view_mask": "TTF"}));
    assert_eq!(run(&["induce", "--config", p(&no_ckpt)]).status.code(), Some(3));

    let unknown = write_config(dir.path(), serde_json::json!({"colour": "blue"}));
    assert_eq!(run(&["induce", "--config", p(&unknown)]).status.code(), Some(3));

    // drop the embedding of one intent-bearing training turn
    let train = std::fs::read_to_string(corpus.join("train.jsonl")).unwrap();
    let victim = train
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .find(|v| v["acts"].as_array().unwrap().iter().any(|a| a == "InformIntent"))
        .unwrap()["utterance_id"]
        .as_str()
        .unwrap()
        .to_string();
    let emb = corpus.join("embeddings.jsonl");
    let text = std::fs::read_to_string(&emb).unwrap();
    let needle = format!("\"{victim}\"");
    let trimmed: Vec<&str> = text.lines().filter(|l| !l.contains(&needle)).collect();
    assert_eq!(trimmed.len() + 1, text.lines().count());
    std::fs::write(&emb, trimmed.join("\n") + "\n").unwrap();
    assert_eq!(run(&["induce", "--config", p(&corpus.join("pipeline.json"))]).status.code(), Some(2));

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{not json}\n").unwrap();
    let o = run(&["extract", "--input", p(&bad), "--out", p(&dir.path().join("x.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn trained_views_chain() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture(dir.path());
    let mdb_cfg = dir.path().join("mdb.json");
    std::fs::write(&mdb_cfg, r#"{"epochs": 3, "hidden_dims": [16], "output_dim": 8}"#).unwrap();
    let pgt_cfg = dir.path().join("pgt.json");
    std::fs::write(&pgt_cfg, r#"{"epochs": 2}"#).unwrap();
    let reg = corpus.join("registry.json");
    let emb = corpus.join("embeddings.jsonl");
    let mdb = dir.path().join("mdb.json.ckpt");
    let pgt = dir.path().join("pgt.json.ckpt");
    let o = run(&["train-mdb", "--config", p(&mdb_cfg), "--registry", p(&reg), "--embeddings", p(&emb), "--out", p(&mdb)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("mdb.json.ckpt.loss.csv").exists());
    let o = run(&[
        "train-pgt", "--config", p(&pgt_cfg), "--mdb-checkpoint", p(&mdb), "--registry", p(&reg),
        "--embeddings", p(&emb), "--out", p(&pgt),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = write_config(
        dir.path(),
        serde_json::json!({"view_mask": "TTT", "mdb_checkpoint": p(&mdb), "pgt_checkpoint": p(&pgt)}),
    );
    let report = stdout_json(&run(&["induce", "--config", p(&cfg)]));
    assert_eq!(report["config"]["view_mask"], "TTT");
    assert!(report["induced_k"].as_u64().unwrap() >= 2);
}
