use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn e2e() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/e2e")
}

fn fw(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fw"));
    for var in ["FW_CONFIG", "FW_OUT", "FW_SEED", "FW_CONTENT_OVERRIDE", "FW_WORKERS", "FW_LOG"] {
        cmd.env_remove(var);
    }
    cmd.args(args).output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_answers_one_question() {
    let out = tempfile::tempdir().unwrap();
    let cfg = e2e().join("simulated.json");
    let o = fw(&[
        "run", "--config", s(&cfg), "--out", s(out.path()),
        "--audio", "clips/interview.wav", "--question", "How many people speak in the recording?",
        "--choice", "one", "--choice", "two", "--choice", "three", "--choice", "four",
        "--duration", "30", "--id", "interview", "--answer", "B",
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let stdout = text(&o.stdout);
    assert!(stdout.contains("B"), "{stdout}");
    assert_eq!(stdout.matches("## ").count(), 7, "{stdout}");
    let records = fs::read_to_string(out.path().join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 1);
    assert!(out.path().join("outputs.jsonl").exists());
}

#[test]
fn run_needs_choices() {
    let o = fw(&["run", "--audio", "a.wav", "--question", "q", "--duration", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("--choice"));
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"source_a": {"kind": "fixture"}}"#).unwrap();
    let o = fw(&["batch", "--config", s(&cfg), "whatever.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    let o = fw(&["batch", "--config", "/nonexistent/config.json", "whatever.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("cannot read config"));
}

#[test]
fn env_names_the_config() {
    let out = tempfile::tempdir().unwrap();
    let manifest = out.path().join("m.jsonl");
    fs::write(&manifest, "").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fw"))
        .env("FW_CONFIG", e2e().join("fixture.json"))
        .env("FW_OUT", out.path())
        .args(["batch", s(&manifest)])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(out.path().join("summary.json").exists());
}

#[test]
fn batch_writes_records_outputs_and_summary() {
    let out = tempfile::tempdir().unwrap();
    let manifest = out.path().join("m.jsonl");
    let lines: Vec<String> = fs::read_to_string(e2e().join("samples.jsonl")).unwrap().lines().take(3).map(String::from).collect();
    fs::write(&manifest, format!("{}\nnot json\n\n{}\n{}\n", lines[0], lines[1], lines[2])).unwrap();
    let o = fw(&["batch", "--config", s(&e2e().join("fixture.json")), "--out", s(out.path()), "--workers", "2", s(&manifest)]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stderr).contains("manifest line 2"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["lines"], 4);
    assert_eq!(summary["completed"], 3);
    assert_eq!(summary["graded"], 3);
    assert_eq!(summary["warnings"].as_array().unwrap().len(), 1);
    assert_eq!(fs::read_to_string(out.path().join("records.jsonl")).unwrap().lines().count(), 3);
    assert_eq!(fs::read_to_string(out.path().join("outputs.jsonl")).unwrap().lines().count(), 3);
}

#[test]
fn empty_batch_succeeds() {
    let out = tempfile::tempdir().unwrap();
    let manifest = out.path().join("m.jsonl");
    fs::write(&manifest, "\n").unwrap();
    let o = fw(&["batch", "--config", s(&e2e().join("fixture.json")), "--out", s(out.path()), s(&manifest)]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["completed"], 0);
    assert!(summary.get("accuracy").is_none());
}

#[test]
fn replay_reproduces_golden_decisions() {
    let out = tempfile::tempdir().unwrap();
    let o = fw(&["replay", "--out", s(out.path()), s(&e2e().join("golden/records.jsonl"))]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("replayed 6 of 6 records; 6 identical decisions"), "{}", text(&o.stdout));
    assert_eq!(
        fs::read(out.path().join("replay/records.jsonl")).unwrap(),
        fs::read(e2e().join("golden/records.jsonl")).unwrap()
    );
}

#[test]
fn tools_list_shows_the_catalog() {
    let o = fw(&["tools", "list"]);
    assert!(o.status.success());
    let stdout = text(&o.stdout);
    assert_eq!(stdout.lines().count(), 26);
    assert!(stdout.contains("temporal segments"));
    let o = fw(&["tools", "list", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 25);
}

#[test]
fn synth_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("stats.jsonl");
    assert!(fw(&["synth", "paper-stats", s(&records)]).status.success());
    let o = fw(&["analyze", "--out", s(dir.path()), s(&records)]);
    assert!(o.status.success());
    let stdout = text(&o.stdout);
    for needle in ["94.5%", "83.2%", "58.0%", "76.9%", "91.1%", "74.4%", "39.4%", "86.2%", "53.8%", "85/1000 = 8.5%"] {
        assert!(stdout.contains(needle), "{needle} missing from\n{stdout}");
    }
    assert!(dir.path().join("analysis.csv").exists());
    let o = fw(&["analyze", "--csv", s(&records)]);
    assert!(text(&o.stdout).starts_with("table,band,n,correct,accuracy"));
}

#[test]
fn ablate_rejects_bad_alpha_and_unknown_filters() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("p.jsonl");
    fs::write(&records, "").unwrap();
    assert_eq!(fw(&["ablate", "--alpha", "1.5", s(&records)]).status.code(), Some(2));
    assert_eq!(fw(&["ablate", "--filter", "c-only", s(&records)]).status.code(), Some(2));
}
