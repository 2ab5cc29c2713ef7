use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sidforge::datamodel::load_embeddings;
use sidforge::rq::{assign_all, save_assignment, save_model, RqModel};

fn sidforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sidforge"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = sidforge(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Model with sizes (240, 113, 8) over dim 3 whose codewords encode their
/// own level and index, so decoded sums are easy to predict.
fn indexed_model() -> RqModel {
    let levels = [240usize, 113, 8]
        .iter()
        .enumerate()
        .map(|(h, &k)| {
            (0..k)
                .map(|t| {
                    let mut c = vec![0.0f32; 3];
                    c[h] = t as f32;
                    c
                })
                .collect()
        })
        .collect();
    RqModel::from_centroids(levels).unwrap()
}

#[test]
fn decode_writes_reconstruction_file() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.sidrq");
    save_model(&model, &indexed_model()).unwrap();
    let out = dir.path().join("v.bin");
    ok_json(&["decode", "--model", s(&model), "--sid", "<a_239><b_112><c_7>", "--out", s(&out)]);
    let bytes = std::fs::read(&out).unwrap();
    assert_eq!(&bytes[..8], b"SIDEMB01");
    let emb = load_embeddings(&out).unwrap();
    assert_eq!(emb.row(0), &[239.0, 112.0, 7.0]);
    assert_eq!(emb.item_ids(), &["<a_239><b_112><c_7>".to_string()]);

    let bad = sidforge(&["decode", "--model", s(&model), "--sid", "<a_240><b_0><c_0>", "--out", s(&dir.path().join("x.bin"))]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(!dir.path().join("x.bin").exists());
}

fn synth_dir(dir: &Path) {
    ok_json(&[
        "synth", "--seed", "5", "--items", "300", "--users", "150", "--dim", "8", "--categories", "5",
        "--enrichment", "1", "--out", s(dir),
    ]);
}

#[test]
fn stepwise_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_dir(d);
    let ingest = ok_json(&[
        "ingest", "--items", s(&d.join("catalog.jsonl")), "--embeddings", s(&d.join("embeddings.bin")),
        "--interactions", s(&d.join("interactions.tsv")), "--k-core", "2", "--out", s(&d.join("clean")),
    ]);
    assert_eq!(ingest["items"], 300);
    let fit = ok_json(&[
        "fit", "--embeddings", s(&d.join("embeddings.bin")), "--sizes", "16,16", "--seed", "1",
        "--out", s(&d.join("m.sidrq")), "--assign", s(&d.join("a.json")),
    ]);
    assert_eq!(fit["sizes"], serde_json::json!([16, 16]));
    let enc = ok_json(&[
        "encode", "--model", s(&d.join("m.sidrq")), "--embeddings", s(&d.join("embeddings.bin")),
        "--out", s(&d.join("a2.json")),
    ]);
    assert_eq!(enc["items"], 300);
    assert_eq!(std::fs::read(d.join("a.json")).unwrap(), std::fs::read(d.join("a2.json")).unwrap());

    let diag = ok_json(&[
        "diagnose", "--model", s(&d.join("m.sidrq")), "--assignment", s(&d.join("a.json")),
        "--embeddings", s(&d.join("embeddings.bin")), "--items", s(&d.join("catalog.jsonl")), "--seed", "2",
    ]);
    let c = diag["collision_rate"].as_f64().unwrap();
    assert_eq!(c + diag["unique_ratio"].as_f64().unwrap(), 1.0);
    assert!(diag["probe_accuracy"].as_f64().is_some());

    let curve = ok_json(&["recon-curve", "--model", s(&d.join("m.sidrq")), "--embeddings", s(&d.join("embeddings.bin"))]);
    assert_eq!(curve["sim"].as_array().unwrap().len(), 2);

    let corpus = ok_json(&[
        "corpus", "--items", s(&d.join("catalog.jsonl")), "--interactions", s(&d.join("interactions.tsv")),
        "--model", s(&d.join("m.sidrq")), "--assignment", s(&d.join("a.json")), "--n", "400", "--seed", "3",
        "--out", s(&d.join("c.jsonl")), "--chat", s(&d.join("c.txt")), "--vocab", s(&d.join("v.txt")),
    ]);
    assert_eq!(corpus["records"], 400);
    assert_eq!(std::fs::read_to_string(d.join("c.jsonl")).unwrap().lines().count(), 400);
    assert_eq!(std::fs::read_to_string(d.join("v.txt")).unwrap().lines().count(), 32);

    ok_json(&[
        "train-baseline", "--interactions", s(&d.join("interactions.tsv")), "--model", s(&d.join("m.sidrq")),
        "--assignment", s(&d.join("a.json")), "--out", s(&d.join("b.json")),
    ]);
    let metrics = ok_json(&[
        "eval", "--baseline", s(&d.join("b.json")), "--interactions", s(&d.join("interactions.tsv")),
        "--model", s(&d.join("m.sidrq")), "--assignment", s(&d.join("a.json")), "--beam", "20", "--k", "5,10",
        "--csv", s(&d.join("m.csv")),
    ]);
    for key in ["HR@5", "HR@10", "NDCG@5", "NDCG@10"] {
        assert!(metrics[key].is_number(), "{key} missing");
    }
    assert!(metrics["HR@5"].as_f64() <= metrics["HR@10"].as_f64());
    assert!(std::fs::read_to_string(d.join("m.csv")).unwrap().starts_with("metric,K,value,n_users\n"));
}

#[test]
fn diagnose_reports_zero_collisions_for_distinct_sids() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = indexed_model();
    let emb = sidforge::datamodel::EmbeddingSet::new(
        3,
        vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 200.0, 0.0, 1.0],
        vec!["x".into(), "y".into(), "z".into()],
    )
    .unwrap();
    save_model(d.join("m.sidrq"), &model).unwrap();
    save_assignment(d.join("a.json"), &assign_all(&model, &emb).unwrap()).unwrap();
    let diag = ok_json(&["diagnose", "--model", s(&d.join("m.sidrq")), "--assignment", s(&d.join("a.json"))]);
    assert_eq!(diag["collision_rate"].as_f64(), Some(0.0));
    assert_eq!(diag["unique_ratio"].as_f64(), Some(1.0));
}

#[test]
fn stochastic_commands_require_seed_and_unknown_flags_fail() {
    let dir = tempfile::tempdir().unwrap();
    let out = sidforge(&["synth", "--items", "10", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = sidforge(&["fit", "--embeddings", "e.bin", "--sizes", "4", "--out", "m"]);
    assert_eq!(out.status.code(), Some(2));
    let out = sidforge(&["synth", "--seed", "1", "--bogus", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    synth_dir(dir.path());
    let out = sidforge(&[
        "fit", "--embeddings", s(&dir.path().join("embeddings.bin")), "--sizes", "4", "--seed", "1",
        "--out", s(&dir.path().join("m.sidrq")), "--assign", s(&dir.path().join("a.json")),
    ]);
    assert!(out.status.success());
    let out = sidforge(&[
        "diagnose", "--model", s(&dir.path().join("m.sidrq")), "--assignment", s(&dir.path().join("a.json")),
        "--items", s(&dir.path().join("catalog.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn failed_command_removes_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_dir(d);
    ok_json(&[
        "fit", "--embeddings", s(&d.join("embeddings.bin")), "--sizes", "8,8", "--seed", "1",
        "--out", s(&d.join("m.sidrq")), "--assign", s(&d.join("a.json")),
    ]);
    let out = sidforge(&[
        "corpus", "--items", s(&d.join("catalog.jsonl")), "--interactions", s(&d.join("interactions.tsv")),
        "--model", s(&d.join("m.sidrq")), "--assignment", s(&d.join("a.json")), "--seed", "3",
        "--out", s(&d.join("c.jsonl")), "--vocab", s(&d.join("missing-dir").join("v.txt")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.join("c.jsonl").exists());
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("pipeline.json");
    let text = format!(
        r#"{{
  "paths": {{"output_dir": "{}"}},
  "synth": {{"num_items": 200, "num_users": 120, "dim": 8, "num_categories": 4,
             "enrichment_level": 1.0, "events_per_user": [6, 12], "seed": 9}},
  "ingest": {{"k_core": 2}},
  "rq": {{"codebook_sizes": [8, 8], "seed": 4}},
  "corpus": {{"n": 300, "seed": 1}}{extra}
}}"#,
        s(&dir.join("out"))
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn pipeline_runs_caches_and_refuses_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let first = ok_json(&["run", "--config", s(&cfg)]);
    let statuses: Vec<&str> = first["stages"].as_array().unwrap().iter().map(|s| s["status"].as_str().unwrap()).collect();
    assert_eq!(statuses, vec!["ran"; 5]);
    let out = dir.path().join("out");
    for f in ["catalog.jsonl", "embeddings.bin", "codebook.sidrq", "assignment.json", "diagnostics.json", "corpus.jsonl"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let second = ok_json(&["run", "--config", s(&cfg)]);
    assert!(second["stages"].as_array().unwrap().iter().all(|s| s["status"] == "cached"));

    let report = ok_json(&["report", "--dir", s(&out)]);
    assert!(report["metrics"]["HR@10"].is_number());

    let emb = out.join("embeddings.bin");
    let mut bytes = std::fs::read(&emb).unwrap();
    bytes[16] ^= 0x40;
    std::fs::write(&emb, bytes).unwrap();
    let refused = sidforge(&["run", "--config", s(&cfg)]);
    assert_eq!(refused.status.code(), Some(12));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("hash mismatch"));
}

#[test]
fn pipeline_stage_one_failure_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_dir(d);
    std::fs::write(d.join("bad.tsv"), "u1\tunknown-item\t1\nu1\tunknown-item\t2\n").unwrap();
    let path = d.join("pipeline.json");
    std::fs::write(
        &path,
        format!(
            r#"{{"paths": {{"items": "{}", "embeddings": "{}", "interactions": "{}", "output_dir": "{}"}},
                "ingest": {{"k_core": 1}}, "rq": {{"codebook_sizes": [4], "seed": 1}}}}"#,
            s(&d.join("catalog.jsonl")),
            s(&d.join("embeddings.bin")),
            s(&d.join("bad.tsv")),
            s(&d.join("out"))
        ),
    )
    .unwrap();
    let out = sidforge(&["run", "--config", s(&path)]);
    assert_eq!(out.status.code(), Some(11), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pipeline_output_independent_of_workers() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = write_config(a.path(), "");
    let cb = write_config(b.path(), "");
    ok_json(&["run", "--config", s(&ca), "--workers", "1"]);
    ok_json(&["run", "--config", s(&cb), "--workers", "3"]);
    for f in ["codebook.sidrq", "assignment.json", "corpus.jsonl", "diagnostics.json", "metrics.json", "manifest.json"] {
        assert_eq!(
            std::fs::read(a.path().join("out").join(f)).unwrap(),
            std::fs::read(b.path().join("out").join(f)).unwrap(),
            "{f}"
        );
    }
}
