//! Synthetic record corpora with known aggregate counts, used to exercise
//! the analyses and the ablation harness end to end.

use super::records::{PipelineRecord, SCHEMA_VERSION};
use crate::argumentation::{Decision, EvidenceBundle};
use crate::evidence::{
    CorroborationStatus, EvidenceItem, EvidenceOrigin, Observation, ObservationScope, ReliabilityTier, RiskLevel,
    SourceId,
};
use crate::intake::{QueryPrediction, SourceReport};
use crate::sample::label_choices;
use crate::unified::AgreementLevel;

pub const SOURCE_A: &str = "source_a";
pub const SOURCE_B: &str = "source_b";
pub const REASONER: &str = "reasoner";

/// Per-band `(correct, incorrect)` counts.
pub struct Stratum {
    pub correct: usize,
    pub incorrect: usize,
}

const fn s(correct: usize, incorrect: usize) -> Stratum {
    Stratum { correct, incorrect }
}

/// Unanimous, majority, conflicting.
pub const AGREEMENT_COUNTS: [Stratum; 3] = [s(121, 7), s(470, 95), s(178, 129)];
/// `≥0.80`, `[0.60, 0.80)`, `[0.40, 0.60)`, `<0.40`.
pub const CALIBRATION_COUNTS: [Stratum; 4] = [s(216, 21), s(537, 185), s(13, 20), s(3, 5)];
/// Zero, one to five, six or more corroborated items.
pub const CORROBORATION_COUNTS: [Stratum; 3] = [s(7, 6), s(519, 186), s(243, 39)];
/// Overriding records among the correct and the incorrect ones.
pub const OVERRIDES: Stratum = s(50, 35);

const BAND_CONFIDENCE: [f64; 4] = [0.90, 0.70, 0.50, 0.30];
const BAND_CORROBORATED: [usize; 3] = [0, 3, 7];

/// Band of the `k`-th record among those with the same correctness, filling
/// bands in order.
fn band(strata: &[Stratum], correct: bool, k: usize) -> usize {
    let mut left = k;
    for (i, st) in strata.iter().enumerate() {
        let n = if correct { st.correct } else { st.incorrect };
        if left < n {
            return i;
        }
        left -= n;
    }
    strata.len() - 1
}

fn prediction_pattern(level: AgreementLevel) -> usize {
    match level {
        AgreementLevel::Unanimous => 8,
        AgreementLevel::Majority => 5,
        AgreementLevel::Conflicting => 4,
    }
}

fn reports(p: &str, q: &str, n_p: usize) -> Vec<SourceReport> {
    let labels: Vec<&str> = (0..8).map(|i| if i < n_p { p } else { q }).collect();
    let scopes = ["full", "s1", "s2", "s3"];
    [SOURCE_A, SOURCE_B]
        .iter()
        .enumerate()
        .map(|(k, src)| SourceReport {
            source: SourceId::new(*src),
            predictions: (0..4)
                .map(|i| QueryPrediction { scope: scopes[i].into(), label: labels[k * 4 + i].into() })
                .collect(),
            ..Default::default()
        })
        .collect()
}

fn corroborated_item(i: usize) -> EvidenceItem {
    lalm_item(&format!("{SOURCE_A}:full:{}", i + 1), SOURCE_A, "corroborated detail", 0.7, CorroborationStatus::Corroborated)
}

fn lalm_item(id: &str, source: &str, claim: &str, confidence: f64, status: CorroborationStatus) -> EvidenceItem {
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

fn base_record(id: String, choices: &[&str]) -> PipelineRecord {
    let choices = label_choices(choices);
    PipelineRecord {
        schema_version: SCHEMA_VERSION,
        sample_id: id.clone(),
        audio: format!("synthetic://{id}"),
        duration_s: 10.0,
        question: "Which option matches the recording?".into(),
        answer: Some("A".into()),
        reasoner_endpoint: REASONER.into(),
        bundle: EvidenceBundle {
            sample_id: id.clone(),
            audio: format!("synthetic://{id}"),
            question: "Which option matches the recording?".into(),
            choices: choices.clone(),
            sources: vec![SourceId::new(SOURCE_A), SourceId::new(SOURCE_B)],
            ..Default::default()
        },
        choices,
        ..Default::default()
    }
}

/// 1,000 records whose agreement, calibration, corroboration and override
/// counts are fixed by the constants above. Records 0..769 are correct.
pub fn paper_stats_corpus() -> Vec<PipelineRecord> {
    let n_correct: usize = AGREEMENT_COUNTS.iter().map(|s| s.correct).sum();
    let n_total: usize = n_correct + AGREEMENT_COUNTS.iter().map(|s| s.incorrect).sum::<usize>();
    (0..n_total)
        .map(|i| {
            let correct = i < n_correct;
            let k = if correct { i } else { i - n_correct };
            let level = [AgreementLevel::Unanimous, AgreementLevel::Majority, AgreementLevel::Conflicting]
                [band(&AGREEMENT_COUNTS, correct, k)];
            let overridden = k < if correct { OVERRIDES.correct } else { OVERRIDES.incorrect };
            let chosen = if correct { "A" } else { "B" };
            let (p, q) = match (correct, overridden) {
                (true, false) => ("A", "B"),
                (true, true) => ("B", "C"),
                (false, false) => ("B", "C"),
                (false, true) => ("C", "D"),
            };
            let mut r = base_record(format!("stats-{i:04}"), &["first", "second", "third", "fourth"]);
            r.source_reports = reports(p, q, prediction_pattern(level));
            r.agreement = level;
            r.decision = Decision {
                answer: chosen.into(),
                confidence: BAND_CONFIDENCE[band(&CALIBRATION_COUNTS, correct, k)],
                ..Default::default()
            };
            r.bundle.items = (0..BAND_CORROBORATED[band(&CORROBORATION_COUNTS, correct, k)]).map(corroborated_item).collect();
            r
        })
        .collect()
}

/// Outcome categories `(baseline, A only, B only)` with their counts.
pub const PLANTED: [((bool, bool, bool), usize); 6] = [
    ((true, true, true), 619),
    ((true, false, true), 76),
    ((true, true, false), 71),
    ((false, true, false), 33),
    ((false, false, true), 39),
    ((false, false, false), 162),
];

const HEAVY: f64 = 0.70;
const LIGHT: f64 = 0.50;

/// Records whose weight-argmax outcomes under each evidence filter follow
/// [`PLANTED`]. Choice A is always gold. Each source contributes one item;
/// which choice it supports and how heavily is chosen per category.
pub fn planted_ablation_corpus() -> Vec<PipelineRecord> {
    let mut out = Vec::new();
    for ((base, a_only, b_only), count) in PLANTED {
        // (A supports gold?, A heavy?, B supports gold?, B heavy?)
        let (a_gold, a_heavy, b_gold, b_heavy) = match (base, a_only, b_only) {
            (true, true, true) => (true, true, true, true),
            (true, false, true) => (false, false, true, true),
            (true, true, false) => (true, true, false, false),
            (false, true, false) => (true, false, false, true),
            (false, false, true) => (false, true, true, false),
            _ => (false, true, false, true),
        };
        for _ in 0..count {
            let i = out.len();
            let mut r = base_record(format!("planted-{i:04}"), &["piano", "guitar", "violin"]);
            let claim = |gold: bool| if gold { "a piano is playing" } else { "a guitar is playing" };
            let conf = |heavy: bool| if heavy { HEAVY } else { LIGHT };
            for (src, gold, heavy) in [(SOURCE_A, a_gold, a_heavy), (SOURCE_B, b_gold, b_heavy)] {
                let id = format!("{src}:full:1");
                r.bundle.observations.push(Observation {
                    id: id.clone(),
                    source: SourceId::new(src),
                    scope: ObservationScope::FullAudio,
                    claim: claim(gold).into(),
                    tags: Default::default(),
                    time_range: None,
                    tentative_prediction: Some(if gold { "A" } else { "B" }.into()),
                });
                r.bundle
                    .items
                    .push(lalm_item(&id, src, claim(gold), conf(heavy), CorroborationStatus::SourceSpecific));
            }
            r.decision = Decision { answer: if base { "A" } else { "B" }.into(), confidence: 0.6, ..Default::default() };
            out.push(r);
        }
    }
    out
}
