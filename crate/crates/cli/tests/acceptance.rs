//! Acceptance run: one line per criterion, non-zero exit if any fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fw_core::analytics::corpus::paper_stats_corpus;
use fw_core::analytics::records::read_records;
use fw_core::analytics::rubrics::RubricsJudgment;
use fw_core::analytics::stats::{holm_bonferroni, mcnemar_exact};
use fw_core::analytics::tables::analyze;
use fw_core::argumentation::{argue, redact, ArgueContext};
use fw_core::backends::{BackendError, ChatBackend, ChatRequest, ChatResponse, Sampling};
use fw_core::contradiction::{speaker_guard, stage2_risk_assessment, stage3_detect, Pitfall, Stage3Context};
use fw_core::evidence::{score_evidence, ContentType, ReliabilityTier, RiskLevel, ScoringConfig, TimeRange};
use fw_core::exec::Execution;
use fw_core::sample::Sample;
use fw_core::tools::{self, build_default_catalog, cap_tool_confidence, Step, ToolOutput, ToolRequest, ToolResult};

#[path = "../../core/tests/support/mod.rs"]
mod support;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok { Ok(()) } else { Err(msg()) }
}

fn e2e() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/e2e")
}

fn fw(args: &[&str]) -> Result<String, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fw"));
    for var in ["FW_CONFIG", "FW_OUT", "FW_SEED", "FW_CONTENT_OVERRIDE", "FW_WORKERS"] {
        cmd.env_remove(var);
    }
    let o = cmd.args(args).output().map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("fw {} exited {:?}: {}", args.join(" "), o.status.code(), String::from_utf8_lossy(&o.stderr)));
    }
    Ok(String::from_utf8_lossy(&o.stdout).into_owned())
}

fn scoring_invariants() -> Check {
    let cfg = ScoringConfig::default();
    let catalog = build_default_catalog();
    let contents = [ContentType::Speech, ContentType::Music, ContentType::Mixed, ContentType::Environmental];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut violations = 0;
    for _ in 0..10_000 {
        let tier = ReliabilityTier::ALL[rng.random_range(0..4)];
        let cap = cfg.tier_cap(tier);
        let base = rng.random_range(1e-6..=1.0) * cap;
        let df = if rng.random_bool(0.5) { 1.0 } else { rng.random_range(0.01..=1.0) };
        let s = score_evidence(base, tier, rng.random(), rng.random(), df, &cfg).map_err(|e| e.to_string())?;
        if s > cap || (tier == ReliabilityTier::Lalm && s > 0.70) || s <= 0.0 {
            violations += 1;
        }
        let spec = &catalog.tools[rng.random_range(0..catalog.tools.len())];
        let raw = ToolResult {
            raw_confidence: rng.random_range(-0.5..2.0),
            ..ToolResult::failed("t".into(), ToolRequest::new(&spec.name, "a.wav"), ReliabilityTier::Lalm, String::new())
        };
        let r = cap_tool_confidence(raw, spec, contents[rng.random_range(0..4)], &cfg);
        let c = r.capped_confidence;
        if c < 0.0 || c > cfg.tier_cap(spec.tier) || (spec.tier == ReliabilityTier::Lalm && c > 0.70) {
            violations += 1;
        }
    }
    ensure(violations == 0, || format!("{violations} cap violations"))?;
    Ok("10000 scored and 10000 tool inputs, 0 violations".into())
}

fn statistics() -> Check {
    let p1 = mcnemar_exact(76, 33);
    let p2 = mcnemar_exact(71, 39);
    ensure(p1 < 0.001, || format!("p(76,33) = {p1}"))?;
    ensure((0.0025..=0.0035).contains(&p2), || format!("p(71,39) = {p2}"))?;
    ensure((p1 - support::mcnemar_oracle(76, 33)).abs() < 1e-12, || "exact oracle disagrees".into())?;
    ensure((p2 - support::mcnemar_oracle(71, 39)).abs() < 1e-12, || "exact oracle disagrees".into())?;
    let holm = holm_bonferroni(&[p1, p2], 0.05);
    ensure(holm[0].adjusted_threshold == 0.025, || format!("first threshold {}", holm[0].adjusted_threshold))?;
    Ok(format!("p = {p1:.3e}, {p2:.4}; Holm first threshold {}", holm[0].adjusted_threshold))
}

fn analytics() -> Check {
    let a = analyze(&paper_stats_corpus());
    let pct = |t: &fw_core::analytics::tables::Table, l: &str| t.row(l).map(|r| r.percent()).unwrap_or(f64::NAN);
    let got = [
        pct(&a.agreement, "unanimous"),
        pct(&a.agreement, "majority"),
        pct(&a.agreement, "conflicting"),
        pct(&a.agreement, "overall"),
        pct(&a.calibration, ">=0.80"),
        pct(&a.calibration, "0.60-0.79"),
        pct(&a.calibration, "0.40-0.59"),
        pct(&a.corroboration, ">=6"),
        pct(&a.corroboration, "0"),
    ];
    let want = [94.5, 83.2, 58.0, 76.9, 91.1, 74.4, 39.4, 86.2, 53.8];
    ensure(got == want, || format!("tables {got:?}"))?;
    let o = &a.overrides;
    ensure((o.n_overridden, o.n_considered) == (85, 1000), || format!("overrides {}/{}", o.n_overridden, o.n_considered))?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..50 {
        let records = support::random_corpus(&mut rng, 200);
        ensure(support::analytics_as_recount(&records) == support::recount(&records), || format!("corpus {i} differs from recount"))?;
    }
    Ok("94.5/83.2/58.0/76.9, 91.1/74.4/39.4, 86.2/53.8, 8.5%; 50 random corpora match".into())
}

fn determinism() -> Check {
    let manifest = e2e().join("samples.jsonl");
    let config = e2e().join("fixture.json");
    let golden = (fs::read(e2e().join("golden/records.jsonl")).map_err(|e| e.to_string())?, fs::read(e2e().join("golden/outputs.jsonl")).map_err(|e| e.to_string())?);
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for run in 0..3 {
        let out = tmp.path().join(format!("run{run}"));
        fw(&["batch", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), manifest.to_str().unwrap()])?;
        let got = (fs::read(out.join("records.jsonl")).map_err(|e| e.to_string())?, fs::read(out.join("outputs.jsonl")).map_err(|e| e.to_string())?);
        ensure(got == golden, || format!("run {} differs from the golden files", run + 1))?;
    }
    let records = read_records(&e2e().join("golden/records.jsonl")).map_err(|e| e.to_string())?.records;
    let cats: BTreeSet<&str> = records.iter().filter_map(|r| r.category.as_deref()).collect();
    ensure(records.len() >= 5 && cats.contains("speech") && cats.contains("music"), || format!("corpus covers {cats:?}"))?;
    ensure(records.iter().any(|r| !r.bundle.contradictions.is_empty() && r.rounds.iter().any(|x| x.step == Step::Step2)), || "no planted contradiction".into())?;
    Ok(format!("{} samples, 3 runs byte-identical to the golden files", records.len()))
}

fn loop_bounds() -> Check {
    for execution in [Execution::Sequential, Execution::Parallel] {
        let (outcome, calls, _) = support::adversarial_run(execution);
        let (s1, s2) = (outcome.rounds_in(Step::Step1), outcome.rounds_in(Step::Step2));
        ensure((s1, s2) == (3, 2), || format!("{s1} Step-1 and {s2} Step-2 rounds"))?;
        let unique: BTreeSet<String> = calls.iter().map(ToolRequest::call_digest).collect();
        ensure(unique.len() == calls.len(), || format!("{} duplicate invocations", calls.len() - unique.len()))?;
    }
    Ok("3 Step-1 rounds, 2 Step-2 rounds, no repeated call".into())
}

fn redaction() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scoring = ScoringConfig::default();
    let ctx = ArgueContext { scoring: &scoring, sampling: Sampling::default(), endpoint: "reasoner" };
    let mut prompts = 0;
    for i in 0..100 {
        let (bundle, markers) = support::random_bundle(&mut rng, i);
        ensure(redact(&bundle).bundle().observations.iter().all(|o| o.tentative_prediction.is_none()), || "redact kept a prediction".into())?;
        let backend = support::Capture::default();
        argue(&bundle, &backend, &ctx);
        for p in backend.prompts.into_inner().unwrap() {
            prompts += 1;
            ensure(!markers.iter().any(|m| p.contains(m.as_str())), || format!("bundle {i} leaked a prediction"))?;
        }
    }
    Ok(format!("100 bundles, {prompts} prompts, no prediction present"))
}

struct Silent;

impl ChatBackend for Silent {
    fn complete(&self, _: &ChatRequest) -> Result<ChatResponse, BackendError> {
        Ok(ChatResponse { text: "[]".into(), latency_ms: 0 })
    }
}

fn count(id: &str, tool: &str, n: u32) -> ToolResult {
    ToolResult {
        output: ToolOutput { summary: format!("{n} speakers"), fields: [("speaker_count".to_string(), serde_json::json!(n))].into() },
        error: None,
        ..ToolResult::failed(id.into(), ToolRequest::new(tool, "a.wav"), ReliabilityTier::Probabilistic, String::new())
    }
}

fn guards() -> Check {
    for c in 1..=12u32 {
        for d in 1..=12u32 {
            let results = [count("t1", tools::DIARIZATION, d), count("t2", tools::SPEAKER_COUNT, c)];
            let items = [
                support::tool_item("t1", tools::DIARIZATION, ReliabilityTier::Probabilistic, "x", None),
                support::tool_item("t2", tools::SPEAKER_COUNT, ReliabilityTier::Probabilistic, "y", None),
            ];
            let flagged = stage2_risk_assessment(&items, &results)
                .iter()
                .any(|a| a.item_id == "t2" && a.risk == RiskLevel::SegmentationArtifact);
            let want = c >= 3 * d;
            ensure(speaker_guard(c, d) == want && flagged == want, || format!("grid cell ({c}, {d})"))?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sample = Sample::new("s", "a.wav", 200.0, "How many speakers?", &["one", "two"]);
    let scoring = ScoringConfig::default();
    let ctx = Stage3Context { sample: &sample, scoring: &scoring, sampling: Sampling::default(), endpoint: "r" };
    for _ in 0..500 {
        let s1 = rng.random_range(0.0..80.0);
        let e1 = s1 + rng.random_range(0.1..20.0);
        let s2 = e1 + rng.random_range(0.0..20.0);
        let e2 = s2 + rng.random_range(0.1..20.0);
        let (n1, n2) = (rng.random_range(1..5), rng.random_range(5..9));
        let mut a = support::tool_item("t1", tools::TRANSCRIPTION, ReliabilityTier::Probabilistic, &format!("{n1} speakers talk"), TimeRange::new(s1, e1));
        let mut b = support::tool_item("t2", tools::DIARIZATION, ReliabilityTier::Probabilistic, &format!("{n2} speakers talk"), TimeRange::new(s2, e2));
        if rng.random_bool(0.5) {
            std::mem::swap(&mut a.time_range, &mut b.time_range);
        }
        let out = stage3_detect(&[a, b], &[], &[], &Silent, &ctx);
        ensure(
            out.contradictions.len() == 1
                && out.contradictions[0].resolved
                && out.contradictions[0].pitfall_flags.contains(&Pitfall::NonOverlappingTranscripts),
            || "a disjoint transcript conflict stayed open".into(),
        )?;
    }
    Ok("144 grid cells exact; 500 disjoint transcript conflicts auto-resolved".into())
}

fn ablation() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let records = tmp.path().join("planted.jsonl");
    fw(&["synth", "planted", records.to_str().unwrap()])?;
    fw(&["ablate", "--out", tmp.path().to_str().unwrap(), records.to_str().unwrap()])?;
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("ablation.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let a = &report["results"][0];
    let delta = a["delta_pp"].as_f64().unwrap_or(f64::NAN);
    ensure((delta - -4.3).abs() < 1e-9, || format!("Δ = {delta}"))?;
    ensure(a["n_d"] == 109 && a["b"] == 76 && a["c"] == 33, || format!("N_d = {}", a["n_d"]))?;
    ensure(a["significant"] == true, || "not significant".into())?;
    Ok(format!("Δ = {delta:.1} pp, N_d = 109 (76/33), p = {:.3e}, significant", a["p_value"].as_f64().unwrap_or(f64::NAN)))
}

fn rubrics() -> Check {
    let mut checked = 0;
    for k in 0..=10usize {
        for bits in 0..(1u32 << k) {
            let verdicts: Vec<bool> = (0..k).map(|i| bits >> i & 1 == 1).collect();
            let j = RubricsJudgment::new("s", verdicts, false);
            ensure(j.score == 0.0, || format!("wrong answer scored {}", j.score))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} verdict vectors, all zero on a wrong answer"))
}

fn main() -> ExitCode {
    let criteria: [(&str, Option<u64>, fn() -> Check); 9] = [
        ("scoring invariants", Some(5), scoring_invariants),
        ("statistics reproduction", Some(1), statistics),
        ("analytics reproduction", Some(10), analytics),
        ("pipeline determinism", Some(30), determinism),
        ("loop bounds", None, loop_bounds),
        ("redaction", None, redaction),
        ("contradiction guards", None, guards),
        ("replay ablation harness", None, ablation),
        ("rubrics gate", None, rubrics),
    ];
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = check();
        let took = started.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(s)) if took > Duration::from_secs(*s) => Err(format!("took {took:.2?}, limit {s} s")),
            (r, _) => r,
        };
        let budget = limit.map(|s| format!(", limit {s} s")).unwrap_or_default();
        match result {
            Ok(detail) => println!("PASS {} {name} ({took:.2?}{budget}): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name} ({took:.2?}{budget}): {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
