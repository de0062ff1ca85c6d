use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use temporec_core::eval::parse_report_csv;

fn temporec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_temporec"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = temporec(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny(name: &str) -> String {
    format!("{}/tests/fixtures/tiny/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn stepwise_pipeline_on_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let data = dir.path().join("data");
    let vectors = dir.path().join("vectors.jsonl");
    let stdout = ok(&[
        "synth",
        "--seed",
        "5",
        "--users",
        "30",
        "--items",
        "120",
        "--topics",
        "3",
        "--out",
        p(&raw),
    ]);
    assert!(
        stdout.starts_with("30 users (15 shifted), 120 items"),
        "{stdout}"
    );
    assert!(raw.join("experiment.cfg").exists());

    let stdout = ok(&[
        "ingest",
        "--interactions",
        p(&raw.join("interactions.jsonl")),
        "--items",
        p(&raw.join("items.jsonl")),
        "--out",
        p(&data),
    ]);
    assert!(
        stdout.starts_with("30 users, 120 items retained"),
        "{stdout}"
    );

    let ecdf = dir.path().join("ecdf.csv");
    let stdout = ok(&["stats", "--data", p(&data), "--ecdf", p(&ecdf)]);
    assert!(stdout.contains("users,30\n"), "{stdout}");
    let ecdf = fs::read_to_string(ecdf).unwrap();
    assert_eq!(
        ecdf.lines().next(),
        Some("history_length,fraction_of_users")
    );
    assert!(ecdf.trim_end().ends_with(",1"), "{ecdf}");

    let stdout = ok(&["profile", "--data", p(&data)]);
    assert_eq!(stdout.trim(), "30 users profiled (30 provider calls)");
    let stdout = ok(&["profile", "--data", p(&data)]);
    assert_eq!(stdout.trim(), "30 users profiled (0 provider calls)");

    let stdout = ok(&[
        "embed",
        "--data",
        p(&data),
        "--dim",
        "32",
        "--cache",
        p(&vectors),
    ]);
    assert!(
        stdout.starts_with("120 items and 30 profiled users embedded at dim 32"),
        "{stdout}"
    );

    let mut models = Vec::new();
    for method in ["popularity", "mf", "centric", "temp-fusion", "llm-tp"] {
        let ckpt = dir.path().join(format!("{method}.ckpt.json"));
        ok(&[
            "train",
            "--data",
            p(&data),
            "--embeddings",
            p(&vectors),
            "--method",
            method,
            "--out",
            p(&ckpt),
            "--hidden",
            "16",
            "--max-epochs",
            "10",
            "--mf-factors",
            "8",
        ]);
        models.push(ckpt);
    }
    let report_dir = dir.path().join("report");
    let mut args = vec![
        "eval",
        "--data",
        p(&data),
        "--embeddings",
        p(&vectors),
        "--out",
        p(&report_dir),
    ];
    for m in &models {
        args.extend(["--model", p(m)]);
    }
    ok(&args);
    let report =
        parse_report_csv(&fs::read_to_string(report_dir.join("report.csv")).unwrap()).unwrap();
    let names: Vec<&str> = report.rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(
        names,
        ["popularity", "mf", "centric", "temp-fusion", "llm-tp"]
    );
    assert_eq!(report.reference.as_deref(), Some("centric"));
    assert!(report
        .rows
        .iter()
        .flat_map(|r| &r.values)
        .all(|v| (0.0..=1.0).contains(v)));
    assert!(report_dir.join("per_user.csv").exists());
}

#[test]
fn ingest_counts_filtered_and_malformed_lines() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&[
        "ingest",
        "--interactions",
        &tiny("interactions.jsonl"),
        "--items",
        &tiny("items.jsonl"),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(
        stdout.trim(),
        "24 users, 72 items retained (2 malformed interaction lines, 1 malformed item lines)"
    );
    let histories = fs::read_to_string(dir.path().join("histories.jsonl")).unwrap();
    assert!(!histories.contains("user_sparse"));
    assert!(!histories.contains("item_short") && !histories.contains("item_foreign"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(
        &cfg,
        "interactions = a.jsonl\nitems = b.jsonl\nlearnign_rate = 0.1\n",
    )
    .unwrap();
    let out = temporec(&["run", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("learnign_rate"), "{stderr}");
}

#[test]
fn failures_exit_with_status_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.jsonl");
    let out = temporec(&[
        "ingest",
        "--interactions",
        p(&missing),
        "--items",
        p(&missing),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));

    ok(&[
        "ingest",
        "--interactions",
        &tiny("interactions.jsonl"),
        "--items",
        &tiny("items.jsonl"),
        "--out",
        p(dir.path()),
    ]);
    let ckpt = dir.path().join("m.ckpt.json");
    let out = temporec(&[
        "train",
        "--data",
        p(dir.path()),
        "--method",
        "llm-tp",
        "--out",
        p(&ckpt),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--embeddings"));
    assert!(!ckpt.exists());

    let out = temporec(&[
        "eval",
        "--data",
        p(dir.path()),
        "--model",
        p(&ckpt),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn popularity_trains_without_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "ingest",
        "--interactions",
        &tiny("interactions.jsonl"),
        "--items",
        &tiny("items.jsonl"),
        "--out",
        p(dir.path()),
    ]);
    let ckpt = dir.path().join("pop.ckpt.json");
    ok(&[
        "train",
        "--data",
        p(dir.path()),
        "--method",
        "popularity",
        "--out",
        p(&ckpt),
    ]);
    let out = dir.path().join("eval");
    ok(&[
        "eval",
        "--data",
        p(dir.path()),
        "--model",
        p(&ckpt),
        "--out",
        p(&out),
    ]);
    let report = parse_report_csv(&fs::read_to_string(out.join("report.csv")).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.reference, None);
}

#[test]
fn usage_errors_exit_with_status_two() {
    let out = temporec(&["train", "--data", "x", "--method", "knn", "--out", "y"]);
    assert_eq!(out.status.code(), Some(2));
    let out = temporec(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}
