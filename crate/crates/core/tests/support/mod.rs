//! Mocks, generators and independent oracles shared by the integration
//! tests and the acceptance run.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Mutex;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::seq::IndexedRandom;
use rand::Rng;

use fw_core::analytics::records::{PipelineRecord, SCHEMA_VERSION};
use fw_core::argumentation::{Decision, EvidenceBundle};
use fw_core::backends::{BackendError, ChatBackend, ChatRequest, ChatResponse, Sampling, ToolBackend};
use fw_core::clock::LogicalClock;
use fw_core::evidence::{
    ContentType, CorroborationStatus, EvidenceItem, EvidenceOrigin, Observation, ObservationScope, ReliabilityTier,
    RiskLevel, ScoringConfig, SourceId, TimeRange,
};
use fw_core::exec::Execution;
use fw_core::intake::{QueryPrediction, SourceReport};
use fw_core::prompts;
use fw_core::sample::{label_choices, Sample};
use fw_core::tools::{build_default_catalog, RawToolOutput, ToolRequest};
use fw_core::unified::{agreement_level, Disagreement, UnifiedAnalysis};
use fw_core::verification::{run_verification, LoopLimits, VerificationOutcome, VerifyContext};

pub fn lalm_item(id: &str, source: &str, claim: &str, confidence: f64, status: CorroborationStatus) -> EvidenceItem {
    EvidenceItem {
        id: id.into(),
        origin: EvidenceOrigin::LalmObservation(SourceId::new(source)),
        claim: claim.into(),
        tier: ReliabilityTier::Lalm,
        status,
        confidence,
        relevance: 1.0,
        risk: RiskLevel::Low,
        corroborated_by: Vec::new(),
        direct_answer: true,
        domain_factor: 1.0,
        time_range: None,
        assessed_confidence: None,
        keyword_adjusted: false,
    }
}

pub fn tool_item(id: &str, tool: &str, tier: ReliabilityTier, claim: &str, range: Option<TimeRange>) -> EvidenceItem {
    EvidenceItem {
        origin: EvidenceOrigin::ToolMeasurement(tool.into()),
        tier,
        status: CorroborationStatus::SourceSpecific,
        time_range: range,
        ..lalm_item(id, "unused", claim, 0.6, CorroborationStatus::SourceSpecific)
    }
}

// ---------------------------------------------------------------------------
// adversarial verification backends

/// Reasoner that asks for fresh tool calls every round and insists the two
/// source claims conflict.
#[derive(Default)]
pub struct Adversary {
    pub proposals: Mutex<u32>,
}

impl ChatBackend for Adversary {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let text = request.user_text();
        let reply = match prompts::task(text) {
            Some(prompts::TASK_PROPOSE) => {
                *self.proposals.lock().unwrap() += 1;
                let round = prompts::header(text, "Round").unwrap_or("0").trim().to_string();
                let tools: Vec<serde_json::Value> = text
                    .lines()
                    .filter_map(|l| l.strip_prefix("- "))
                    .filter_map(|l| l.split(" (").next())
                    .take(6)
                    .map(|t| serde_json::json!({"tool": t, "params": {"probe": round}}))
                    .collect();
                serde_json::Value::Array(tools).to_string()
            }
            Some(prompts::TASK_CONTRADICTIONS) => {
                let ids: Vec<String> = prompts::item_lines(text)
                    .into_iter()
                    .map(|(id, _)| id)
                    .filter(|id| id.starts_with("source_"))
                    .collect();
                serde_json::json!([{
                    "kind": "inter_source", "item_ids": ids,
                    "description": "the sources disagree", "resolved": false
                }])
                .to_string()
            }
            _ => String::new(),
        };
        Ok(ChatResponse { text: reply, latency_ms: 0 })
    }
}

/// Tool service that logs every invocation and never settles anything.
#[derive(Default)]
pub struct CountingTools {
    pub calls: Mutex<Vec<ToolRequest>>,
}

impl ToolBackend for CountingTools {
    fn invoke(&self, request: &ToolRequest) -> Result<RawToolOutput, BackendError> {
        self.calls.lock().unwrap().push(request.clone());
        Ok(RawToolOutput {
            summary: "inconclusive measurement".into(),
            confidence: 0.99,
            relevance: Some(0.5),
            ..Default::default()
        })
    }
}

pub fn meeting_sample() -> Sample {
    Sample::new("adv", "adv.wav", 30.0, "How many people speak?", &["two speakers", "three speakers", "four speakers"])
}

/// Verification over a speaker-count dispute with the adversarial backends.
pub fn adversarial_run(execution: Execution) -> (VerificationOutcome, Vec<ToolRequest>, u32) {
    let sample = meeting_sample();
    let catalog = build_default_catalog().validate().unwrap();
    let scoring = ScoringConfig::default();
    let clock = LogicalClock::default();
    let unified = UnifiedAnalysis {
        items: vec![
            lalm_item("source_a:full:1", "source_a", "two speakers talk", 0.6, CorroborationStatus::Disagreement),
            lalm_item("source_b:full:1", "source_b", "three speakers talk", 0.6, CorroborationStatus::Disagreement),
        ],
        disagreements: vec![Disagreement {
            id: "d1".into(),
            item_ids: vec!["source_a:full:1".into(), "source_b:full:1".into()],
            topic: "speaker".into(),
            credibility_note: "equal standing".into(),
            resolved: false,
        }],
        ..Default::default()
    };
    let ctx = VerifyContext {
        sample: &sample,
        catalog: &catalog,
        scoring: &scoring,
        content: ContentType::Speech,
        limits: LoopLimits::default(),
        sampling: Sampling::default(),
        endpoint: "reasoner",
        clock: &clock,
        execution,
    };
    let reasoner = Adversary::default();
    let tools = CountingTools::default();
    let outcome = run_verification(unified, &reasoner, &tools, &ctx);
    let proposals = *reasoner.proposals.lock().unwrap();
    (outcome, tools.calls.into_inner().unwrap(), proposals)
}

// ---------------------------------------------------------------------------
// redaction

/// Records every prompt and answers in the expected shapes.
#[derive(Default)]
pub struct Capture {
    pub prompts: Mutex<Vec<String>>,
}

impl ChatBackend for Capture {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let text: String = request.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n");
        self.prompts.lock().unwrap().push(text);
        let reply = match prompts::task(request.user_text()) {
            Some(prompts::TASK_SELECT) => "ANSWER: A".to_string(),
            _ => fw_core::argumentation::REASONING_SECTIONS
                .iter()
                .map(|h| format!("## {h}\nSee the evidence above.\n"))
                .collect(),
        };
        Ok(ChatResponse { text: reply, latency_ms: 0 })
    }
}

/// Marker no generated claim can contain.
pub fn marker(rng: &mut impl Rng) -> String {
    format!("predmark{:016x}", rng.random::<u64>())
}

const WORDS: [&str; 12] = [
    "piano", "guitar", "speaker", "crowd", "rain", "engine", "violin", "drums", "voice", "birds", "siren", "choir",
];

fn claim(rng: &mut impl Rng) -> String {
    let n = rng.random_range(2..6);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// A bundle whose observations all carry a tentative prediction; returns
/// the markers used.
pub fn random_bundle(rng: &mut impl Rng, id: usize) -> (EvidenceBundle, Vec<String>) {
    let choices = label_choices(&["piano", "guitar", "violin", "drums"][..rng.random_range(2..=4)]);
    let sources = vec![SourceId::new("source_a"), SourceId::new("source_b")];
    let mut observations = Vec::new();
    let mut items = Vec::new();
    let mut markers = Vec::new();
    for (k, src) in sources.iter().enumerate() {
        for j in 0..rng.random_range(1..6) {
            let oid = format!("{src}:o{j}");
            let m = marker(rng);
            let pred = if rng.random_bool(0.5) { m.clone() } else { format!("{} {m}", choices[k % choices.len()].label) };
            markers.push(m);
            let c = claim(rng);
            observations.push(Observation {
                id: oid.clone(),
                source: src.clone(),
                scope: ObservationScope::FullAudio,
                claim: c.clone(),
                tags: Default::default(),
                time_range: None,
                tentative_prediction: Some(pred),
            });
            let status = *[CorroborationStatus::Corroborated, CorroborationStatus::SourceSpecific, CorroborationStatus::Disagreement]
                .choose(rng)
                .unwrap();
            items.push(lalm_item(&oid, src.as_str(), &c, rng.random_range(0.05..0.70), status));
        }
    }
    let bundle = EvidenceBundle {
        sample_id: format!("bundle-{id}"),
        audio: format!("clip-{id}.wav"),
        question: "Which instrument is heard?".into(),
        choices,
        content: ContentType::Music,
        sources,
        observations,
        items,
        ..Default::default()
    };
    (bundle, markers)
}

// ---------------------------------------------------------------------------
// statistics oracle

fn binomial(n: u64, k: u64) -> BigUint {
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// Two-sided exact McNemar in rational arithmetic:
/// `min(1, 2 · Σ_{i ≤ min(b, c)} C(n, i) / 2^n)`.
pub fn mcnemar_oracle(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let tail = (0..=b.min(c)).fold(BigUint::zero(), |acc, i| acc + binomial(n, i));
    let num = tail * 2u32;
    let den = BigUint::one() << n;
    if num >= den {
        return 1.0;
    }
    // scale to keep 60 significant bits
    let shift = den.bits().saturating_sub(60);
    let (num, den) = (num >> shift, den >> shift);
    num.to_f64().unwrap() / den.to_f64().unwrap()
}

// ---------------------------------------------------------------------------
// analytics corpora and recount oracle

pub fn random_corpus(rng: &mut impl Rng, n: usize) -> Vec<PipelineRecord> {
    let labels = ["A", "B", "C", "D"];
    (0..n)
        .map(|i| {
            let choices = label_choices(&["one", "two", "three", "four"]);
            let reports: Vec<SourceReport> = if rng.random_bool(0.05) {
                Vec::new()
            } else {
                ["source_a", "source_b"]
                    .iter()
                    .map(|s| SourceReport {
                        source: SourceId::new(*s),
                        predictions: (0..rng.random_range(0..=4))
                            .map(|q| QueryPrediction { scope: format!("q{q}"), label: (*labels[..rng.random_range(1..=4)].choose(rng).unwrap()).into() })
                            .collect(),
                        ..Default::default()
                    })
                    .collect()
            };
            let agreement = match reports.as_slice() {
                [a, b] => agreement_level(a, b),
                _ => Default::default(),
            };
            let items = (0..rng.random_range(0..10))
                .map(|k| {
                    let status = *[CorroborationStatus::Corroborated, CorroborationStatus::SourceSpecific, CorroborationStatus::Disagreement]
                        .choose(rng)
                        .unwrap();
                    lalm_item(&format!("i{k}"), "source_a", "x", 0.5, status)
                })
                .collect();
            PipelineRecord {
                schema_version: SCHEMA_VERSION,
                sample_id: format!("r{i}"),
                choices: choices.clone(),
                answer: rng.random_bool(0.9).then(|| (*labels.choose(rng).unwrap()).into()),
                source_reports: reports,
                agreement,
                decision: Decision {
                    answer: (*labels.choose(rng).unwrap()).into(),
                    // round to the stored precision, and hit band edges often
                    confidence: if rng.random_bool(0.2) {
                        *[0.4, 0.6, 0.8, 0.3999, 0.7999].choose(rng).unwrap()
                    } else {
                        (rng.random_range(0.0..=1.0f64) * 1e4).round() / 1e4
                    },
                    ..Default::default()
                },
                bundle: EvidenceBundle { choices, items, ..Default::default() },
                ..Default::default()
            }
        })
        .collect()
}

/// `(n, correct)` per band label, plus `(overridden, considered)`.
#[derive(Debug, PartialEq)]
pub struct Recount {
    pub agreement: BTreeMap<String, (usize, usize)>,
    pub calibration: BTreeMap<String, (usize, usize)>,
    pub corroboration: BTreeMap<String, (usize, usize)>,
    pub overrides: (usize, usize),
}

/// Straight-line recount that shares no code with the analytics module.
pub fn recount(records: &[PipelineRecord]) -> Recount {
    let mut agreement = BTreeMap::new();
    let mut calibration = BTreeMap::new();
    let mut corroboration = BTreeMap::new();
    let mut overrides = (0, 0);
    let bump = |m: &mut BTreeMap<String, (usize, usize)>, k: &str, ok: bool| {
        let e = m.entry(k.to_string()).or_insert((0, 0));
        e.0 += 1;
        if ok {
            e.1 += 1;
        }
    };
    for r in records {
        let preds: Vec<&str> = r.source_reports.iter().flat_map(|s| &s.predictions).map(|p| p.label.as_str()).collect();
        if !preds.is_empty() {
            overrides.1 += 1;
            if !preds.contains(&r.decision.answer.as_str()) {
                overrides.0 += 1;
            }
        }
        let Some(gold) = &r.answer else { continue };
        let ok = *gold == r.decision.answer;
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for p in &preds {
            *counts.entry(p).or_default() += 1;
        }
        let top = counts.values().max().copied().unwrap_or(0);
        let level = if counts.len() == 1 {
            "unanimous"
        } else if top * 2 > preds.len() && !preds.is_empty() {
            "majority"
        } else {
            "conflicting"
        };
        bump(&mut agreement, level, ok);
        bump(&mut agreement, "overall", ok);
        let c = r.decision.confidence;
        let band = if c < 0.40 {
            "<0.40"
        } else if c < 0.60 {
            "0.40-0.59"
        } else if c < 0.80 {
            "0.60-0.79"
        } else {
            ">=0.80"
        };
        bump(&mut calibration, band, ok);
        let k = r.bundle.items.iter().filter(|i| i.status == CorroborationStatus::Corroborated).count();
        bump(&mut corroboration, if k == 0 { "0" } else if k <= 5 { "1-5" } else { ">=6" }, ok);
    }
    Recount { agreement, calibration, corroboration, overrides }
}

pub fn table_map(t: &fw_core::analytics::tables::Table) -> BTreeMap<String, (usize, usize)> {
    t.rows.iter().map(|r| (r.label.clone(), (r.n, r.correct))).collect()
}

/// Recount of the analytics module's output in the oracle's shape.
pub fn analytics_as_recount(records: &[PipelineRecord]) -> Recount {
    let a = fw_core::analytics::tables::analyze(records);
    Recount {
        agreement: table_map(&a.agreement),
        calibration: table_map(&a.calibration),
        corroboration: table_map(&a.corroboration),
        overrides: (a.overrides.n_overridden, a.overrides.n_considered),
    }
}
