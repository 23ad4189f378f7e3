//! End-to-end runs over the checked-in fixture corpus.
//!
//! `FW_BLESS=1 cargo test -p fw-core --test golden` re-records the fixtures
//! from the simulation script and rewrites the golden files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fw_core::analytics::ablation::{filter_bundle, EvidenceFilter};
use fw_core::analytics::records::{parse_records, write_record, PipelineRecord};
use fw_core::argumentation::{redact, select_answer, ArgueContext};
use fw_core::backends::{
    ChatBackend, FixtureChat, RecordingChat, RecordingTools, ReplayChat, ReplayLog, ReplayTools,
};
use fw_core::config::RunConfig;
use fw_core::evidence::SourceId;
use fw_core::pipeline::{Engine, RunOptions, SampleRun};
use fw_core::sample::Sample;

fn data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/e2e")
}

fn config(name: &str) -> RunConfig {
    RunConfig::load_with_env(&data().join(name), std::iter::empty()).unwrap()
}

fn samples() -> Vec<Sample> {
    fs::read_to_string(data().join("samples.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn run(engine: &Engine) -> Vec<SampleRun> {
    samples().iter().map(|s| engine.run_sample(s, RunOptions::default()).unwrap()).collect()
}

/// The two JSONL documents `fw batch` writes.
fn render(runs: &[SampleRun]) -> (Vec<u8>, Vec<u8>) {
    let mut records = Vec::new();
    let mut outputs = Vec::new();
    for r in runs {
        write_record(&mut records, &r.record).unwrap();
        serde_json::to_writer(&mut outputs, &r.output).unwrap();
        outputs.write_all(b"\n").unwrap();
    }
    (records, outputs)
}

fn bless() {
    let dir = data();
    let fixtures = dir.join("fixtures");
    let _ = fs::remove_dir_all(&fixtures);
    let mut engine = config("simulated.json").engine().unwrap();
    let chat = fixtures.join("chat");
    engine.sources = engine
        .sources
        .into_iter()
        .map(|(id, b)| (id, Arc::new(RecordingChat::new(b, &chat)) as Arc<dyn ChatBackend>))
        .collect();
    engine.reasoner = Arc::new(RecordingChat::new(engine.reasoner, &chat));
    engine.tools = Arc::new(RecordingTools::new(engine.tools, fixtures.join("tools")));
    let (records, outputs) = render(&run(&engine));
    fs::create_dir_all(dir.join("golden")).unwrap();
    fs::write(dir.join("golden/records.jsonl"), records).unwrap();
    fs::write(dir.join("golden/outputs.jsonl"), outputs).unwrap();
}

static BLESS: std::sync::Once = std::sync::Once::new();

/// Re-records once per test binary when `FW_BLESS` is set.
fn ensure_blessed() {
    BLESS.call_once(|| {
        if std::env::var_os("FW_BLESS").is_some() {
            bless();
        }
    });
}

fn golden_records() -> Vec<PipelineRecord> {
    ensure_blessed();
    let text = fs::read(data().join("golden/records.jsonl")).unwrap();
    let read = parse_records(text.as_slice()).unwrap();
    assert!(read.warnings.is_empty(), "{:?}", read.warnings);
    read.records
}

#[test]
fn fixture_runs_match_golden_files() {
    ensure_blessed();
    let engine = config("fixture.json").engine().unwrap();
    let first = render(&run(&engine));
    for _ in 0..2 {
        assert!(render(&run(&engine)) == first, "fixture runs differ");
    }
    let golden_records = fs::read(data().join("golden/records.jsonl")).unwrap();
    let golden_outputs = fs::read(data().join("golden/outputs.jsonl")).unwrap();
    assert!(first.0 == golden_records, "records differ from golden/records.jsonl; rerun with FW_BLESS=1 if intended");
    assert!(first.1 == golden_outputs, "outputs differ from golden/outputs.jsonl");
}

#[test]
fn simulation_and_fixtures_agree() {
    ensure_blessed();
    let sim = render(&run(&config("simulated.json").engine().unwrap()));
    let fix = render(&run(&config("fixture.json").engine().unwrap()));
    assert!(sim == fix);
}

#[test]
fn corpus_covers_speech_music_and_a_planted_contradiction() {
    let records = golden_records();
    assert!(records.len() >= 5);
    let cats: Vec<_> = records.iter().filter_map(|r| r.category.as_deref()).collect();
    assert!(cats.contains(&"speech") && cats.contains(&"music"));
    let meeting = records.iter().find(|r| r.sample_id == "meeting").unwrap();
    assert!(!meeting.bundle.contradictions.is_empty());
    assert!(meeting.rounds.iter().any(|r| r.step == fw_core::tools::Step::Step2));
    let cafe = records.iter().find(|r| r.sample_id == "cafe").unwrap();
    assert!(cafe.warnings.iter().any(|w| w.contains("no usable observations")));
}

#[test]
fn replaying_records_reproduces_them() {
    let records = golden_records();
    let log = Arc::new(ReplayLog::from_exchanges(
        records.iter().flat_map(|r| r.exchanges.clone()),
        records.iter().flat_map(|r| r.tool_exchanges.clone()),
    ));
    let cfg = config("fixture.json");
    let chat: Arc<dyn ChatBackend> = Arc::new(ReplayChat::new(log.clone()));
    let engine = Engine {
        sources: vec![
            (SourceId::new(cfg.source_label(0)), chat.clone()),
            (SourceId::new(cfg.source_label(1)), chat.clone()),
        ],
        reasoner: chat,
        reasoner_endpoint: cfg.reasoner_endpoint(),
        tools: Arc::new(ReplayTools::new(log.clone())),
        catalog: cfg.catalog().unwrap(),
        settings: cfg.settings(),
    };
    let replayed = render(&run(&engine)).0;
    assert!(replayed == fs::read(data().join("golden/records.jsonl")).unwrap());
    assert_eq!(log.remaining(), 0);
}

#[test]
fn baseline_replay_reproduces_live_decisions() {
    let cfg = config("fixture.json");
    let judge = FixtureChat::open(cfg.reasoner.path.as_deref().unwrap());
    let endpoint = cfg.reasoner_endpoint();
    let ctx = ArgueContext { scoring: &cfg.scoring, sampling: cfg.settings().sampling, endpoint: &endpoint };
    for r in golden_records() {
        let replayed = select_answer(&redact(&filter_bundle(&r.bundle, EvidenceFilter::Both)), &judge, &ctx);
        assert_eq!(
            serde_json::to_string(&replayed).unwrap(),
            serde_json::to_string(&r.decision).unwrap(),
            "{}",
            r.sample_id
        );
    }
}
