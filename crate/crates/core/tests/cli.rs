//! The `tacitree` binary: exit codes, the full mock pipeline, determinism.

use std::path::Path;
use std::process::{Command, Output};

use tacitree::corpus::SAMPLE_PERSONAS;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tacitree")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn write_personas(dir: &Path) -> String {
    let p = dir.join("personas.txt");
    std::fs::write(&p, SAMPLE_PERSONAS.join("\n")).unwrap();
    s(&p)
}

fn gen(dir: &Path, extra: &[&str]) -> Output {
    let personas = write_personas(dir);
    let out = s(&dir.join("corpus"));
    let mut args = vec!["--seed", "3", "gen", "--personas", &personas, "--out-dir", &out];
    args.extend_from_slice(extra);
    bin(&args)
}

#[test]
fn usage_and_input_errors() {
    assert_eq!(code(&bin(&[])), 1);
    assert_eq!(code(&bin(&["retrieve", "--query", "x"])), 2);
    assert_eq!(code(&bin(&["build", "--history", "/does/not/exist.jsonl", "--out", "/tmp/never.json"])), 2);
    assert_eq!(code(&bin(&["eval", "--strategies", "nope", "--history", "/x", "--tasks", "/y", "--out", "/z"])), 2);
    assert_eq!(code(&bin(&["--help"])), 0);
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = \"not a number\"").unwrap();
    assert_eq!(code(&bin(&["--config", &s(&bad), "build"])), 1);
    // http without any profile bound
    assert_eq!(code(&bin(&["--backend", "http", "build", "--history", "/x", "--out", "/y"])), 1);
    let k = dir.path().join("k.toml");
    std::fs::write(&k, "[build]\nk = 1\n").unwrap();
    assert_eq!(code(&bin(&["--config", &s(&k), "build"])), 1);
    assert_eq!(code(&bin(&["--config", &s(&dir.path().join("missing.toml")), "build"])), 1);
}

#[test]
fn empty_pool_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool");
    std::fs::create_dir(&pool).unwrap();
    let out = gen(dir.path(), &["--pool", &s(&pool)]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unreachable_backend_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gen(dir.path(), &["--kind", "opposed"])), 0);
    let cfg = dir.path().join("http.toml");
    let mut text = String::from("backend = \"http\"\n");
    for (role, kind) in [("generator", "http_chat"), ("framework", "http_chat"), ("judge", "http_chat"), ("embedder", "http_embed")] {
        text.push_str(&format!(
            "[[profiles]]\nrole = \"{role}\"\nkind = \"{kind}\"\nendpoint = \"http://127.0.0.1:9/v1\"\nmodel_name = \"m\"\nmax_retries = 0\ntimeout_secs = 2\n"
        ));
    }
    std::fs::write(&cfg, text).unwrap();
    let hist = s(&dir.path().join("corpus/example_000/history.jsonl"));
    let out = bin(&["--config", &s(&cfg), "build", "--history", &hist, "--out", &s(&dir.path().join("t.json"))]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn full_mock_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let review = s(&d.join("review.json"));
    let out = gen(d, &["--examples", "2", "--review-queue", &review]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for ex in ["example_000", "example_001"] {
        for f in ["history.jsonl", "tasks.jsonl", "scenarios.json", "review_queue.json"] {
            assert!(d.join("corpus").join(ex).join(f).exists(), "{ex}/{f}");
        }
    }
    let rq: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&review).unwrap()).unwrap();
    assert_eq!(rq["config"]["seed"], 3);
    let first_line = std::fs::read_to_string(d.join("corpus/example_000/history.jsonl")).unwrap();
    assert!(first_line.lines().next().unwrap().contains("\"config\""));

    let hist = s(&d.join("corpus/example_000/history.jsonl"));
    let tasks = s(&d.join("corpus/example_000/tasks.jsonl"));
    let tree = s(&d.join("tree.json"));
    let out = bin(&["build", "--history", &hist, "--out", &tree]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(stats["facts"].as_u64().unwrap() > 0);
    assert!(std::fs::metadata(&tree).unwrap().len() < std::fs::metadata(&hist).unwrap().len());

    let out = bin(&["retrieve", "--tree", &tree, "--query", "How can I renew my passport now?", "--oracle"]);
    assert_eq!(code(&out), 0);
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["oracle"]["superset"], true);

    let out = bin(&["answer", "--tree", &tree, "--query", "What should I cook tonight?", "--granularity", "facts"]);
    assert_eq!(code(&out), 0);
    let a: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!a["answer"].as_str().unwrap().is_empty());

    let report = d.join("report");
    let out = bin(&["eval", "--history", &hist, "--tasks", &tasks, "--tree", &tree, "--strategies", "tacitree_summary,flat_topk", "--out", &s(&report)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json = std::fs::read_to_string(report.with_extension("json")).unwrap();
    let set = tacitree::eval::ReportSet::from_json(&json).unwrap();
    assert_eq!(set.reports.len(), 2);
    assert_eq!(set.reports[0].config["run"]["seed"], 0);
    let csv = std::fs::read_to_string(report.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.starts_with("aggregate,")).count(), 2);

    let out = bin(&["score-implicitness", "--tasks", &tasks, "--history", &hist]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["stats"]["count"].as_u64().unwrap() > 0);
}

#[test]
fn generation_is_byte_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(code(&gen(a.path(), &[])), 0);
    assert_eq!(code(&gen(b.path(), &[])), 0);
    for f in ["history.jsonl", "tasks.jsonl", "scenarios.json", "review_queue.json"] {
        let p = Path::new("corpus/example_000").join(f);
        assert_eq!(std::fs::read(a.path().join(&p)).unwrap(), std::fs::read(b.path().join(&p)).unwrap(), "{f}");
    }
}

#[test]
fn config_file_supplies_paths() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&gen(d, &["--kind", "supportive"])), 0);
    let cfg = d.join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "seed = 3\n[paths]\nhistory = \"{}\"\ntree = \"{}\"\n",
            s(&d.join("corpus/example_000/history.jsonl")),
            s(&d.join("tree.json"))
        ),
    )
    .unwrap();
    assert_eq!(code(&bin(&["--config", &s(&cfg), "build"])), 0);
    assert!(d.join("tree.json").exists());
}
