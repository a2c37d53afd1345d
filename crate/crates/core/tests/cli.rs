use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctxgraph::ingest::{fallback_embed, parse_key_tsv, EmbeddingTable};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ctxgraph"))
}

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus/manifest.jsonl")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(&o),
        stderr(&o)
    );
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn build_graphs_writes_every_graph_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = ok(run(&["build-graphs", "--manifest", s(&corpus()), "--out", s(out)]));
        assert!(stdout(&o).starts_with("samples 3 skipped 0"), "{}", stdout(&o));
    }
    let files = dir_bytes(&a);
    let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        [
            "s1.claim.json",
            "s1.evidence.json",
            "s2.claim.json",
            "s2.evidence.json",
            "s3.claim.json",
            "s3.evidence.json",
            "samples.jsonl"
        ]
    );
    assert_eq!(files, dir_bytes(&b));
}

#[test]
fn missing_documents_are_listed() {
    let tmp = tempfile::tempdir().unwrap();
    let m = tmp.path().join("m.jsonl");
    fs::write(
        &m,
        r#"{"id":"x","claim_doc":"nowhere.conllu","evidence_docs":["gone.conllu"],"label":1}"#,
    )
    .unwrap();
    let o = run(&["build-graphs", "--manifest", s(&m), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("nowhere.conllu") && err.contains("gone.conllu"), "{err}");
    let o = run(&["ingest", "--manifest", s(&m)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn ingest_reports_counts() {
    let o = ok(run(&["ingest", "--manifest", s(&corpus())]));
    assert!(stdout(&o).starts_with("records 3 documents 7 "), "{}", stdout(&o));
}

#[test]
fn features_train_eval_predict() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let (graphs, feats, run_dir) = (t.join("graphs"), t.join("feats"), t.join("run"));
    ok(run(&["build-graphs", "--manifest", s(&corpus()), "--out", s(&graphs)]));
    let o = ok(run(&[
        "features",
        "--graphs",
        s(&graphs),
        "--dim",
        "384",
        "--out",
        s(&feats),
    ]));
    assert!(stdout(&o).starts_with("graphs 6"), "{}", stdout(&o));

    let o = ok(run(&[
        "train",
        "--synthetic",
        "40",
        "--embedding-dim",
        "384",
        "--hidden",
        "16",
        "--epochs",
        "2",
        "--seed",
        "3",
        "--out",
        s(&run_dir),
    ]));
    let out = stdout(&o);
    assert!(out.contains("reference 10724391"), "{out}");
    assert!(out.contains("samples 40 skipped 0 train 34 test 6"), "{out}");
    assert!(stderr(&o).contains("seed 3"));
    let log = fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for f in ["config.json", "checkpoint.json", "checkpoint.bin"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }

    let ck = run_dir.join("checkpoint.json");
    let o = ok(run(&["eval", "--checkpoint", s(&ck), "--data", s(&feats)]));
    let first = stdout(&o).lines().next().unwrap().to_string();
    let metrics: serde_json::Value = serde_json::from_str(&first).unwrap();
    let n = metrics["n"].as_u64().unwrap();
    assert!(stdout(&o).contains(&format!("evaluated {n} skipped {}", 3 - n)));

    let o = ok(run(&[
        "predict",
        "--checkpoint",
        s(&ck),
        "--claim",
        s(&graphs.join("s1.claim.json")),
        "--evidence",
        s(&graphs.join("s1.evidence.json")),
    ]));
    let line = stdout(&o).trim().to_string();
    let (_, frac) = line.split_once('.').unwrap();
    assert_eq!(frac.len(), 6, "{line}");
    let v: f64 = line.parse().unwrap();
    assert!(v > 0.0 && v < 1.0);
}

#[test]
fn eval_on_empty_directory_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    ok(run(&[
        "train",
        "--synthetic",
        "20",
        "--embedding-dim",
        "384",
        "--hidden",
        "8",
        "--epochs",
        "0",
        "--out",
        s(&run_dir),
    ]));
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = run(&[
        "eval",
        "--checkpoint",
        s(&run_dir.join("checkpoint.json")),
        "--data",
        s(&empty),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"lr":0.1,"learning_rate":0.2}"#).unwrap();
    let o = run(&["train", "--synthetic", "10", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
    let o = run(&[
        "train",
        "--synthetic",
        "10",
        "--config",
        s(&tmp.path().join("none.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["train", "--synthetic", "10", "--lr", "-1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["bogus-command"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_feeds_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"embedding_dim":384,"hidden":8,"heads":[2],"epochs":1,"seed":9}"#,
    )
    .unwrap();
    let run_dir = tmp.path().join("run");
    ok(run(&[
        "train",
        "--synthetic",
        "20",
        "--config",
        s(&cfg),
        "--out",
        s(&run_dir),
    ]));
    let written: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(written["hidden"], 8);
    assert_eq!(written["seed"], 9);
    assert_eq!(written["heads"], serde_json::json!([2]));
}

#[test]
fn rank_keeps_top_k() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let mut images = EmbeddingTable::new(2);
    for k in ["img1", "img2", "img3"] {
        images.insert(k, vec![1.0, 0.0]).unwrap();
    }
    let mut texts = EmbeddingTable::new(2);
    let docs = [
        ("passive", 0.9f32),
        ("verbless", 0.2),
        ("attributes", 0.5),
        ("dedup", 0.1),
        ("greet", 0.7),
        ("compound", 0.3),
    ];
    for (k, c) in docs {
        texts.insert(k, vec![c, (1.0 - c * c).sqrt()]).unwrap();
    }
    images.write(&t.join("img.egtb")).unwrap();
    texts.write(&t.join("txt.egtb")).unwrap();
    let out = t.join("ranked");
    ok(run(&[
        "rank",
        "--manifest",
        s(&corpus()),
        "--images",
        s(&t.join("img.egtb")),
        "--texts",
        s(&t.join("txt.egtb")),
        "--k",
        "1",
        "--out",
        s(&out),
    ]));
    let ranking: Vec<serde_json::Value> = fs::read_to_string(out.join("ranking.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let top: Vec<&str> = ranking.iter().map(|r| r["doc_ids"][0].as_str().unwrap()).collect();
    assert_eq!(
        top,
        ["../kg/passive.conllu", "../kg/attributes.conllu", "../kg/greet.conllu"]
    );

    // The ranked manifest builds graphs from only the kept documents.
    let o = ok(run(&[
        "build-graphs",
        "--manifest",
        s(&out.join("manifest.ranked.jsonl")),
        "--out",
        s(&t.join("g")),
    ]));
    assert!(stdout(&o).starts_with("samples 3"));
}

#[test]
fn gradcheck_small_model() {
    let o = ok(run(&["gradcheck", "--embedding-dim", "384", "--hidden", "16"]));
    let out = stdout(&o);
    let err: f64 = out.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(err < 1e-4, "{out}");
    let o = run(&[
        "gradcheck",
        "--embedding-dim",
        "384",
        "--hidden",
        "16",
        "--tolerance",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn key_lists_feed_an_exported_table() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let (graphs, keys, feats) = (t.join("graphs"), t.join("keys"), t.join("feats"));
    ok(run(&["build-graphs", "--manifest", s(&corpus()), "--out", s(&graphs)]));
    let o = ok(run(&[
        "keys",
        "--graphs",
        s(&graphs),
        "--manifest",
        s(&corpus()),
        "--out",
        s(&keys),
    ]));
    assert!(stdout(&o).contains("documents 6"), "{}", stdout(&o));

    let docs = parse_key_tsv(&fs::read_to_string(keys.join("documents.tsv")).unwrap()).unwrap();
    assert_eq!(docs.len(), 6);
    assert!(docs.iter().all(|(k, p)| k.starts_with("../kg/") && !p.is_empty()));

    // Stand-in for the exporter: one vector per listed label.
    let labels = parse_key_tsv(&fs::read_to_string(keys.join("labels.tsv")).unwrap()).unwrap();
    assert!(!labels.is_empty());
    let mut table = EmbeddingTable::new(384);
    for (k, payload) in &labels {
        table.insert(k.clone(), fallback_embed(payload, 384).unwrap()).unwrap();
    }
    table.write(&t.join("labels.egtb")).unwrap();
    let with_table = ok(run(&[
        "features",
        "--graphs",
        s(&graphs),
        "--labels",
        s(&t.join("labels.egtb")),
        "--out",
        s(&feats),
    ]));
    let fallback = ok(run(&[
        "features",
        "--graphs",
        s(&graphs),
        "--dim",
        "384",
        "--out",
        s(&t.join("f2")),
    ]));
    assert_eq!(stdout(&with_table), stdout(&fallback));
    assert_eq!(dir_bytes(&feats), dir_bytes(&t.join("f2")));

    let o = run(&["keys", "--out", s(&keys)]);
    assert_eq!(o.status.code(), Some(2));
}
