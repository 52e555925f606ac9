mod common;

use std::{path::Path, process::Command};

use serde_json::Value;

fn ktrlf(dir: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ktrlf"));
    c.current_dir(dir);
    c.env_remove("KTRLF_CONFIG");
    c.env("KTRLF_CACHE_DIR", dir.join("cache"));
    c
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let out = cmd.output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn fixture(name: &str) -> String {
    common::fixtures().join(name).to_string_lossy().into_owned()
}

fn write_first_doc(dir: &Path) -> std::path::PathBuf {
    let line = std::fs::read_to_string(common::fixtures().join("dataset.jsonl")).unwrap();
    let first: Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    let path = dir.join("social.txt");
    std::fs::write(&path, first["text"].as_str().unwrap()).unwrap();
    path
}

fn index_doc(dir: &Path, extra: &[&str]) -> std::path::PathBuf {
    let doc = write_first_doc(dir);
    let out = dir.join("social.ktrlf");
    let (code, stdout, stderr) = run(ktrlf(dir)
        .args(["index", "--doc"])
        .arg(&doc)
        .arg("--out")
        .arg(&out)
        .args(["--gazetteer", &fixture("gazetteer.jsonl")])
        .args(extra));
    assert_eq!(code, 0, "{stderr}");
    let v: Value = serde_json::from_str(&stdout).unwrap();
    assert!(v["mention_count"].as_u64().unwrap() > 0);
    assert!(v["indexing_ms"].as_f64().is_some());
    out
}

#[test]
fn index_then_search() {
    let dir = tempfile::tempdir().unwrap();
    let index = index_doc(dir.path(), &["--knowledge-dir", &fixture("knowledge")]);
    let bytes = std::fs::read(&index).unwrap();
    assert_eq!(ktrlf::index::PhraseIndex::from_bytes(&bytes).unwrap().to_bytes(), bytes);

    let (code, stdout, _) = run(ktrlf(dir.path())
        .args(["search", "--index"])
        .arg(&index)
        .args(["--query", "Social network platform of China"]));
    assert_eq!(code, 0);
    let matches: Vec<Value> = serde_json::from_str(&stdout).unwrap();
    assert_eq!(matches.len(), 4);
    for key in ["rank", "start", "end", "text", "entity_id", "score"] {
        assert!(matches[0].get(key).is_some(), "missing {key}");
    }

    let (_, stdout, _) = run(ktrlf(dir.path())
        .args(["search", "--index"])
        .arg(&index)
        .args(["--query", "Social network platform of China", "--top-k", "2", "--policy", "entity"]));
    let entity: Vec<Value> = serde_json::from_str(&stdout).unwrap();
    assert!(entity.len() >= 2);
}

#[test]
fn knowledge_only_with_empty_store_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    index_doc(dir.path(), &["--mode", "knowledge-only"]);
}

#[test]
fn search_on_empty_index_prints_empty_list() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("plain.txt"), "Nothing to see here.").unwrap();
    let (code, _, stderr) = run(ktrlf(dir.path()).args([
        "index",
        "--doc",
        "plain.txt",
        "--out",
        "plain.ktrlf",
        "--gazetteer",
        &fixture("gazetteer.jsonl"),
    ]));
    assert_eq!(code, 0, "{stderr}");
    let (code, stdout, _) = run(ktrlf(dir.path()).args(["search", "--index", "plain.ktrlf", "--query", "anything"]));
    assert_eq!(code, 0);
    assert_eq!(stdout.trim(), "[]");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = run(ktrlf(dir.path()).args(["index", "--out", "x.ktrlf"]));
    assert_eq!(code, 2, "missing --doc is a usage error");
    let (code, _, stderr) = run(ktrlf(dir.path()).args(["search", "--index", "missing.ktrlf", "--query", "q"]));
    assert_eq!(code, 1);
    assert_eq!(stderr.lines().count(), 1, "{stderr}");

    std::fs::write(dir.path().join("garbage.ktrlf"), b"NOTANINDEX").unwrap();
    let (code, _, stderr) = run(ktrlf(dir.path()).args(["search", "--index", "garbage.ktrlf", "--query", "q"]));
    assert_eq!(code, 1);
    assert!(stderr.contains("magic"), "{stderr}");

    std::fs::write(dir.path().join("empty.txt"), "\n\n").unwrap();
    let index = index_doc(dir.path(), &[]);
    let (code, _, _) = run(ktrlf(dir.path())
        .args(["bench", "--index"])
        .arg(&index)
        .args(["--queries", "empty.txt"]));
    assert_eq!(code, 2);
}

#[test]
fn eval_pipeline_then_rescore_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, stderr) = run(ktrlf(dir.path()).args([
        "eval",
        "--dataset",
        &fixture("dataset.jsonl"),
        "--gazetteer",
        &fixture("gazetteer.jsonl"),
        "--knowledge-dir",
        &fixture("knowledge"),
        "--out-dir",
        "pipeline",
    ]));
    assert_eq!(code, 0, "{stderr}");
    assert!(stderr.contains("(R) List EM"));
    let printed: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(printed["n_queries"], 9);

    // Nothing but the dump and the dataset: a broken provider config must not matter.
    let (code, _, stderr) = run(ktrlf(dir.path())
        .env("KTRLF_PROVIDER", "remote")
        .env_remove("KTRLF_PROVIDER_URL")
        .args(["eval", "--dataset", &fixture("dataset.jsonl")])
        .args(["--predictions", "pipeline/predictions.jsonl", "--out-dir", "rescore"]));
    assert_eq!(code, 0, "{stderr}");
    let a = std::fs::read(dir.path().join("pipeline/report.json")).unwrap();
    let b = std::fs::read(dir.path().join("rescore/report.json")).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        std::fs::read(dir.path().join("pipeline/report.txt")).unwrap(),
        std::fs::read(dir.path().join("rescore/report.txt")).unwrap()
    );
}

#[test]
fn eval_identity_dump_scores_100() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = ktrlf::model::load_dataset(common::fixtures().join("dataset.jsonl")).unwrap();
    let lists: Vec<_> = dataset
        .queries()
        .map(|q| ktrlf::model::PredictionList {
            qid: q.qid.clone(),
            ranked: q
                .gold_mentions
                .iter()
                .map(|g| ktrlf::model::Prediction {
                    text: g.text.clone(),
                    span: g.span,
                    score: None,
                })
                .collect(),
        })
        .collect();
    ktrlf::model::write_predictions(dir.path().join("gold.jsonl"), &lists).unwrap();
    let (code, stdout, stderr) = run(ktrlf(dir.path()).args([
        "eval",
        "--dataset",
        &fixture("dataset.jsonl"),
        "--predictions",
        "gold.jsonl",
        "--out-dir",
        "out",
    ]));
    assert_eq!(code, 0, "{stderr}");
    let r: Value = serde_json::from_str(&stdout).unwrap();
    for section in ["corpus", "robustness"] {
        for (k, v) in r[section].as_object().unwrap() {
            assert_eq!(v.as_f64(), Some(100.0), "{section}.{k}");
        }
    }
}

#[test]
fn eval_without_linker_is_usage_error_but_gold_mode_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = run(ktrlf(dir.path()).args(["eval", "--dataset", &fixture("dataset.jsonl")]));
    assert_eq!(code, 2);
    let (code, stdout, stderr) = run(ktrlf(dir.path()).args([
        "eval",
        "--dataset",
        &fixture("dataset.jsonl"),
        "--gold-mentions",
        "--out-dir",
        "gold",
    ]));
    assert_eq!(code, 0, "{stderr}");
    let r: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(r["n_queries"], 9);
}

#[test]
fn bench_reports_indexing_separately() {
    let dir = tempfile::tempdir().unwrap();
    let doc = write_first_doc(dir.path());
    std::fs::write(dir.path().join("q.txt"), "Social network platform of China\nsearch engine\n").unwrap();
    let (code, stdout, stderr) = run(ktrlf(dir.path())
        .args(["bench", "--doc"])
        .arg(&doc)
        .args(["--queries", "q.txt", "--repeats", "1", "--warmup", "0"])
        .args(["--gazetteer", &fixture("gazetteer.jsonl")]));
    assert_eq!(code, 0, "{stderr}");
    let v: Value = serde_json::from_str(&stdout).unwrap();
    assert!(v["indexing_ms"].as_f64().unwrap() > 0.0);
    assert_eq!(v["ms_per_q_mean"], v["ms_per_q_p50"]);
    assert_eq!(v["dims"], 128);
}

#[test]
fn environment_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let doc = write_first_doc(dir.path());
    let (code, stdout, stderr) = run(ktrlf(dir.path())
        .env("KTRLF_D", "16")
        .env("KTRLF_GAZETTEER", fixture("gazetteer.jsonl"))
        .args(["index", "--doc"])
        .arg(&doc)
        .args(["--out", "x.ktrlf"]));
    assert_eq!(code, 0, "{stderr}");
    let v: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["dims"], 32);

    std::fs::write(dir.path().join("ktrlf.toml"), "d = 8\n").unwrap();
    let (code, stdout, _) = run(ktrlf(dir.path())
        .env("KTRLF_GAZETTEER", fixture("gazetteer.jsonl"))
        .args(["--config", "ktrlf.toml", "index", "--doc"])
        .arg(&doc)
        .args(["--out", "y.ktrlf"]));
    assert_eq!(code, 0);
    assert_eq!(serde_json::from_str::<Value>(&stdout).unwrap()["dims"], 16);
}
