mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use common::json_close;
use oss_ethics::cli::run;
use oss_ethics::corpus::{load_dataset, DatasetRecord};
use serde_json::Value;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

fn cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let argv = std::iter::once("oss-ethics").chain(args.iter().copied());
    let code = run(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn e2e_copy(dir: &Path) -> PathBuf {
    let dataset = dir.join("dataset.jsonl");
    fs::copy(Path::new(FIXTURES).join("e2e/dataset.jsonl"), &dataset).unwrap();
    dataset
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn classify_evaluate_gate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = e2e_copy(dir.path());
    let stub = format!("{FIXTURES}/e2e/transcript.json");
    let preds = dir.path().join("preds.jsonl");

    let (code, out) = cli(&[
        "classify",
        "--dataset",
        s(&dataset),
        "--stub",
        &stub,
        "--out",
        s(&preds),
    ]);
    assert_eq!(code, 0, "{out}");
    let summary: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["records"], 20);
    assert_eq!(summary["repaired"], 1);
    assert_eq!(summary["needs_review"], 1);
    assert!(summary["model_calls"].as_u64().unwrap() >= 20);
    assert!(PathBuf::from(format!("{}.run.json", s(&preds))).exists());

    // Same inputs again: everything comes from the verdict cache.
    let (code, out) = cli(&[
        "classify",
        "--dataset",
        s(&dataset),
        "--stub",
        &stub,
        "--out",
        s(&preds),
    ]);
    assert_eq!(code, 0, "{out}");
    let again: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(again["model_calls"], 0);
    assert_eq!(again["cache_hits"], 20);

    let report = dir.path().join("report.json");
    let (code, out) = cli(&[
        "evaluate",
        "--predictions",
        s(&preds),
        "--truth",
        s(&dataset),
        "--out",
        s(&report),
    ]);
    assert_eq!(code, 0, "{out}");
    let golden = read_json(&Path::new(FIXTURES).join("e2e/golden_report.json"));
    json_close(&read_json(&report), &golden, 1e-12, "report").unwrap();
    let table = fs::read_to_string(dir.path().join("report.table.csv")).unwrap();
    assert!(table.starts_with("flags,precision_micro,precision_macro,recall_micro,recall_macro,f1_micro,f1_macro"));
    assert_eq!(table.lines().count(), 4);
    assert!(dir.path().join("report.flags.csv").exists());

    let (code, out) = cli(&["gate", "--report", s(&report), "--threshold", "0.5"]);
    assert_eq!(code, 0, "{out}");
    assert_eq!(serde_json::from_str::<Value>(&out).unwrap()["passed"], true);
    let (code, _) = cli(&[
        "gate",
        "--report",
        s(&report),
        "--metric",
        "micro-f1:negative",
        "--threshold",
        "0.99",
    ]);
    assert_eq!(code, 1);
    let (code, _) = cli(&["gate", "--report", s(&report), "--metric", "sideways-f1"]);
    assert_eq!(code, 2);

    // Move half of the records to a second repository.
    let mixed = dir.path().join("mixed.jsonl");
    let text: Vec<String> = fs::read_to_string(&preds)
        .unwrap()
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i % 2 == 1 {
                l.replace("\"fixture/e2e\"", "\"fixture/other\"")
            } else {
                l.to_string()
            }
        })
        .collect();
    fs::write(&mixed, text.join("\n") + "\n").unwrap();

    let dist = dir.path().join("dist.json");
    let dist_csv = dir.path().join("dist.csv");
    let (code, out) = cli(&[
        "distribution",
        "--predictions",
        s(&mixed),
        "--out",
        s(&dist),
        "--csv",
        s(&dist_csv),
    ]);
    assert_eq!(code, 0, "{out}");
    let reports = read_json(&dist);
    assert_eq!(reports[0]["repo"], "fixture/e2e");
    assert_eq!(reports[1]["repo"], "fixture/other");
    let total: f64 = reports[0]["percentages"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_f64().unwrap())
        .sum();
    assert!((total - 100.0).abs() <= 0.2);

    let cmp = dir.path().join("cmp.csv");
    let (code, out) = cli(&["compare", "--reports", s(&dist), "--out", s(&cmp)]);
    assert_eq!(code, 0, "{out}");
    assert_eq!(fs::read_to_string(&cmp).unwrap().lines().count(), 3);
}

#[test]
fn repeated_runs_feed_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = e2e_copy(dir.path());
    let preds = dir.path().join("runs.jsonl");
    let (code, out) = cli(&[
        "classify",
        "--dataset",
        s(&dataset),
        "--stub",
        &format!("{FIXTURES}/e2e/transcript.json"),
        "--runs",
        "3",
        "--no-cache",
        "--out",
        s(&preds),
    ]);
    assert_eq!(code, 0, "{out}");
    let runset = dir.path().join("runs.runset.json");
    assert!(runset.exists());
    let report = dir.path().join("consistency.json");
    let (code, out) = cli(&["consistency", "--runset", s(&runset), "--out", s(&report)]);
    assert_eq!(code, 0, "{out}");
    let c = read_json(&report);
    assert_eq!(c["k"], 3);
    assert!(c["exact_match_pct"].as_f64().unwrap() <= c["flag_match_pct"].as_f64().unwrap());
}

#[test]
fn offline_ingest_and_screen() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("widgets.jsonl");
    let (code, out) = cli(&[
        "ingest",
        "octo/widgets",
        "--from",
        "2024-01-01",
        "--to",
        "2025-01-01",
        "--out",
        s(&out_path),
        "--fixture",
        &format!("{FIXTURES}/github_fetch.json"),
        "--as-of",
        "2025-01-05T12:00:00Z",
    ]);
    assert_eq!(code, 0, "{out}");
    let records = load_dataset(&out_path).unwrap();
    assert_eq!(
        records
            .iter()
            .filter(|r| matches!(r, DatasetRecord::Contribution(_)))
            .count(),
        6
    );

    let (code, out) = cli(&[
        "screen",
        "octo/busy",
        "octo/boundary",
        "octo/stale",
        "--fixture",
        &format!("{FIXTURES}/github_profiles.json"),
        "--as-of",
        "2025-01-05T12:00:00Z",
    ]);
    assert_eq!(code, 0, "{out}");
    let active: Vec<bool> = out
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["active"].as_bool().unwrap())
        .collect();
    assert_eq!(active, vec![true, false, false]);

    let sample = dir.path().join("sample.jsonl");
    let (code, out) = cli(&[
        "sample",
        "--dataset",
        s(&out_path),
        "--n",
        "3",
        "--seed",
        "11",
        "--out",
        s(&sample),
    ]);
    assert_eq!(code, 0, "{out}");
    assert_eq!(load_dataset(&sample).unwrap().len(), 3);
}

#[test]
fn agreement_between_two_annotators() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ann.jsonl");
    let line = |id: &str, who: &str, flags: &str| {
        format!(
            r#"{{"record":"annotation","contribution_id":"{id}","annotator_id":"{who}","labels":[{flags}],"annotated_at":"2024-01-01T00:00:00Z"}}"#
        )
    };
    let lines = [
        line("c1", "a", r#""F1""#),
        line("c1", "b", r#""F1""#),
        line("c2", "a", r#""F7""#),
        line("c2", "b", r#""F11""#),
    ];
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let (code, out) = cli(&["agreement", "--annotations", s(&path)]);
    assert_eq!(code, 0, "{out}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert!(v.to_string().contains("macro_kappa"), "{v}");
}

#[test]
fn binary_reports_usage_errors() {
    let status = Command::new(env!("CARGO_BIN_EXE_oss-ethics"))
        .arg("no-such-command")
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    let status = Command::new(env!("CARGO_BIN_EXE_oss-ethics"))
        .args([
            "evaluate",
            "--predictions",
            "/nonexistent/p.jsonl",
            "--truth",
            "/nonexistent/t.jsonl",
            "--out",
            "/tmp/x.json",
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(3));
    let err = String::from_utf8(status.stderr).unwrap();
    assert!(err.contains("\"error\""), "{err}");
}
