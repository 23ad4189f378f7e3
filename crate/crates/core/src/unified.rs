//! Cross-source corroboration: every observation becomes one evidence item
//! with a status (corroborated, source-specific, disagreement) and a
//! confidence inside the status range.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::backends::{ChatBackend, ChatRequest, Message, Sampling};
use crate::evidence::{
    score_evidence, CorroborationStatus, EvidenceItem, EvidenceOrigin, Observation,
    ReliabilityTier, RiskLevel, ScoringConfig,
};
use crate::intake::SourceReport;
use crate::prompts;
use crate::sample::{self, Sample};
use crate::serde_util;
use crate::text;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementLevel {
    Unanimous,
    Majority,
    #[default]
    Conflicting,
}

impl std::fmt::Display for AgreementLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AgreementLevel::Unanimous => "unanimous",
            AgreementLevel::Majority => "majority",
            AgreementLevel::Conflicting => "conflicting",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub id: String,
    pub item_ids: Vec<String>,
    pub topic: String,
    pub credibility_note: String,
    pub resolved: bool,
}

/// One verdict of the corroboration reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    #[serde(default)]
    pub claim: String,
    pub status: CorroborationStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    pub sources: Vec<String>,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UnifiedAnalysis {
    pub items: Vec<EvidenceItem>,
    pub disagreements: Vec<Disagreement>,
    pub agreement: AgreementLevel,
    /// The lexical fallback produced the verdicts.
    #[serde(default)]
    pub fallback: bool,
    /// Items whose reported confidence fell outside the status range.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clamped: Vec<String>,
}

/// Assessed-confidence range for a status.
pub fn status_range(status: CorroborationStatus) -> (f64, f64) {
    match status {
        CorroborationStatus::Corroborated => (0.80, 0.95),
        CorroborationStatus::SourceSpecific => (0.50, 0.70),
        CorroborationStatus::Disagreement => (0.30, 0.60),
    }
}

pub fn status_midpoint(status: CorroborationStatus) -> f64 {
    let (lo, hi) = status_range(status);
    (lo + hi) / 2.0
}

pub struct UnifiedContext<'a> {
    pub sample: &'a Sample,
    pub scoring: &'a ScoringConfig,
    pub sampling: Sampling,
    pub dedup_threshold: f64,
    pub endpoint: &'a str,
}

pub fn corroborate_prompt(a: &SourceReport, b: &SourceReport, sample: &Sample) -> String {
    let mut out = format!(
        "Task: {}\nAudio: {}\nQuestion: {}\n{}\n",
        prompts::TASK_CORROBORATE,
        sample.audio,
        sample.question,
        prompts::choice_block(&sample.choices)
    );
    for r in [a, b] {
        out.push_str(&format!("Source {}:\n", r.source));
        for o in &r.observations {
            out.push_str(&format!("[{}] {}\n", o.id, o.claim));
        }
        out.push('\n');
    }
    out.push_str(
        "Group the observations by claim and judge agreement across the two sources.\n\
         Reply with a JSON array; each entry: {\"claim\": text, \"status\": \"corroborated\" | \
         \"source_specific\" | \"disagreement\", \"confidence\": 0-1, \"sources\": [observation ids], \
         \"note\": credibility assessment for disagreements}.\n",
    );
    out
}

/// Parses the corroboration reply; `None` when no usable array is present.
pub fn parse_verdicts(reply: &str) -> Option<Vec<Verdict>> {
    let values = prompts::extract_json_array(reply)?;
    let verdicts: Vec<Verdict> = values
        .into_iter()
        .filter_map(|v| serde_json::from_value(v).ok())
        .collect();
    (!verdicts.is_empty()).then_some(verdicts)
}

fn credibility_note(x: &Observation, y: &Observation, a: &SourceReport, b: &SourceReport) -> String {
    let backed = |o: &Observation| a.segment_corroborated_ids.contains(&o.id) || b.segment_corroborated_ids.contains(&o.id);
    match (backed(x), backed(y)) {
        (true, false) => format!("{} repeated its claim across scopes; {} did not", x.source, y.source),
        (false, true) => format!("{} repeated its claim across scopes; {} did not", y.source, x.source),
        (true, true) => "both sources repeated their claims across scopes".into(),
        (false, false) => "neither claim is backed by a second scope".into(),
    }
}

/// Deterministic lexical verdicts: explicit conflicts first, then
/// near-duplicate claims, then everything left as source-specific.
pub fn lexical_verdicts(a: &SourceReport, b: &SourceReport, threshold: f64) -> Vec<Verdict> {
    let mut conflicts = Vec::new();
    let mut agreements = Vec::new();
    for x in &a.observations {
        let tx = text::content_tokens(&x.claim);
        for y in &b.observations {
            if let Some(c) = text::conflict(&x.claim, &y.claim) {
                let topic = match c {
                    text::Conflict::Numeric { unit, .. } => unit,
                    text::Conflict::Negation { term } => term,
                };
                conflicts.push(Verdict {
                    claim: topic,
                    status: CorroborationStatus::Disagreement,
                    confidence: None,
                    sources: vec![x.id.clone(), y.id.clone()],
                    note: credibility_note(x, y, a, b),
                });
            } else if text::jaccard(&tx, &text::content_tokens(&y.claim)) >= threshold {
                agreements.push(Verdict {
                    claim: x.claim.clone(),
                    status: CorroborationStatus::Corroborated,
                    confidence: None,
                    sources: vec![x.id.clone(), y.id.clone()],
                    note: String::new(),
                });
            }
        }
    }
    let covered: BTreeSet<&String> = conflicts.iter().chain(&agreements).flat_map(|v| &v.sources).collect();
    let singles: Vec<Verdict> = a
        .observations
        .iter()
        .chain(&b.observations)
        .filter(|o| !covered.contains(&o.id))
        .map(|o| Verdict {
            claim: o.claim.clone(),
            status: CorroborationStatus::SourceSpecific,
            confidence: None,
            sources: vec![o.id.clone()],
            note: String::new(),
        })
        .collect();
    conflicts.into_iter().chain(agreements).chain(singles).collect()
}

/// Evidence item for one source observation.
pub fn lalm_item(
    obs: &Observation,
    status: CorroborationStatus,
    assessed: f64,
    corroborated_by: Vec<String>,
    segment_corroborated: bool,
    sample: &Sample,
    scoring: &ScoringConfig,
) -> EvidenceItem {
    let cap = scoring.tier_cap(ReliabilityTier::Lalm);
    let direct = !sample::supported_choices(&obs.claim, &sample.choices).is_empty();
    let base = assessed.clamp(f64::MIN_POSITIVE, cap);
    let confidence = score_evidence(base, ReliabilityTier::Lalm, segment_corroborated, direct, 1.0, scoring)
        .unwrap_or(base);
    EvidenceItem {
        id: obs.id.clone(),
        origin: EvidenceOrigin::LalmObservation(obs.source.clone()),
        claim: obs.claim.clone(),
        tier: ReliabilityTier::Lalm,
        status,
        confidence,
        relevance: sample::lexical_relevance(&obs.claim, &sample.question, &sample.choices),
        risk: RiskLevel::Low,
        corroborated_by,
        direct_answer: direct,
        domain_factor: 1.0,
        time_range: obs.effective_range(),
        assessed_confidence: Some(serde_util::round4(assessed)),
        keyword_adjusted: false,
    }
}

#[derive(Default)]
struct Assignment {
    status: BTreeMap<String, (CorroborationStatus, f64, bool)>,
    partners: BTreeMap<String, BTreeSet<String>>,
    disagreements: Vec<Disagreement>,
}

impl Assignment {
    fn apply(&mut self, verdicts: &[Verdict], owner: &BTreeMap<&str, usize>) {
        for v in verdicts {
            let ids: Vec<&str> = v
                .sources
                .iter()
                .map(String::as_str)
                .filter(|id| owner.contains_key(id))
                .collect();
            if ids.is_empty() {
                continue;
            }
            let both_sides = ids.iter().any(|id| owner[id] == 0) && ids.iter().any(|id| owner[id] == 1);
            let effective = match v.status {
                CorroborationStatus::Corroborated if !both_sides => CorroborationStatus::SourceSpecific,
                CorroborationStatus::Disagreement if ids.len() < 2 => CorroborationStatus::SourceSpecific,
                s => s,
            };
            let (lo, hi) = status_range(effective);
            let (conf, clamped) = match v.confidence {
                Some(c) if c.is_finite() => (c.clamp(lo, hi), c < lo || c > hi),
                _ => (status_midpoint(effective), false),
            };
            if effective == CorroborationStatus::Corroborated {
                for x in &ids {
                    let others = ids.iter().filter(|y| owner[*y] != owner[x]).map(|y| y.to_string());
                    self.partners.entry(x.to_string()).or_default().extend(others);
                }
            }
            let mut fresh = false;
            for id in &ids {
                if !self.status.contains_key(*id) {
                    self.status.insert(id.to_string(), (effective, conf, clamped));
                    fresh = true;
                }
            }
            if effective == CorroborationStatus::Disagreement && fresh {
                self.disagreements.push(Disagreement {
                    id: String::new(),
                    item_ids: ids.iter().map(|s| s.to_string()).collect(),
                    topic: v.claim.clone(),
                    credibility_note: if v.note.is_empty() {
                        "no credibility assessment given".into()
                    } else {
                        v.note.clone()
                    },
                    resolved: false,
                });
            }
        }
    }
}

/// Applies verdicts to the observations. Each observation takes the status
/// of the first verdict naming it; observations no verdict names fall back
/// to the lexical rule.
pub fn build_analysis(
    a: &SourceReport,
    b: &SourceReport,
    verdicts: &[Verdict],
    ctx: &UnifiedContext<'_>,
) -> UnifiedAnalysis {
    let owner: BTreeMap<&str, usize> = a
        .observations
        .iter()
        .map(|o| (o.id.as_str(), 0))
        .chain(b.observations.iter().map(|o| (o.id.as_str(), 1)))
        .collect();
    let mut acc = Assignment::default();
    acc.apply(verdicts, &owner);
    if owner.keys().any(|id| !acc.status.contains_key(*id)) {
        acc.apply(&lexical_verdicts(a, b, ctx.dedup_threshold), &owner);
    }
    let Assignment { status, partners, mut disagreements } = acc;
    // disagreement members can only be items that actually took that status
    disagreements.retain(|d| {
        d.item_ids
            .iter()
            .filter(|id| matches!(status.get(*id), Some((CorroborationStatus::Disagreement, ..))))
            .count()
            >= 2
    });
    for (i, d) in disagreements.iter_mut().enumerate() {
        d.id = format!("d{}", i + 1);
    }

    let mut items = Vec::new();
    let mut clamped = Vec::new();
    for r in [a, b] {
        for o in &r.observations {
            let (s, conf, was_clamped) = status
                .get(&o.id)
                .copied()
                .unwrap_or((CorroborationStatus::SourceSpecific, status_midpoint(CorroborationStatus::SourceSpecific), false));
            if was_clamped {
                clamped.push(o.id.clone());
            }
            let by = partners.get(&o.id).map(|p| p.iter().cloned().collect()).unwrap_or_default();
            let seg = r.segment_corroborated_ids.contains(&o.id);
            items.push(lalm_item(o, s, conf, by, seg, ctx.sample, ctx.scoring));
        }
    }
    UnifiedAnalysis {
        items,
        disagreements,
        agreement: agreement_level(a, b),
        fallback: false,
        clamped,
    }
}

/// One reasoning call, with the lexical fallback when the reply is unusable
/// or the call fails.
pub fn corroborate_sources(
    a: &SourceReport,
    b: &SourceReport,
    backend: &dyn ChatBackend,
    ctx: &UnifiedContext<'_>,
) -> UnifiedAnalysis {
    let request = ChatRequest::new(
        ctx.endpoint,
        &ctx.sample.id,
        vec![
            Message::system("You compare observations from two independent audio analysts."),
            Message::user(corroborate_prompt(a, b, ctx.sample)),
        ],
    )
    .with_sampling(ctx.sampling);
    let verdicts = match backend.complete(&request) {
        Ok(r) => parse_verdicts(&r.text),
        Err(e) => {
            tracing::warn!(sample = %ctx.sample.id, error = %e, "corroboration call failed");
            None
        }
    };
    match verdicts {
        Some(v) => build_analysis(a, b, &v, ctx),
        None => {
            let v = lexical_verdicts(a, b, ctx.dedup_threshold);
            UnifiedAnalysis { fallback: true, ..build_analysis(a, b, &v, ctx) }
        }
    }
}

/// Agreement over the per-query tentative predictions of both sources.
pub fn agreement_level(a: &SourceReport, b: &SourceReport) -> AgreementLevel {
    let labels: Vec<&str> = a
        .predictions
        .iter()
        .chain(&b.predictions)
        .map(|p| p.label.as_str())
        .collect();
    agreement_from_labels(&labels)
}

pub fn agreement_from_labels(labels: &[&str]) -> AgreementLevel {
    if labels.is_empty() {
        return AgreementLevel::Conflicting;
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    if counts.len() == 1 {
        AgreementLevel::Unanimous
    } else if 2 * top > labels.len() {
        AgreementLevel::Majority
    } else {
        AgreementLevel::Conflicting
    }
}
