//! Contradiction handling in three stages plus adjudication.
//!
//! Stage 1 nudges LALM confidences by keyword agreement with reproducible
//! tools. Stage 2 assigns hallucination risk, including the speaker-count
//! guard. Stage 3 finds typed conflicts (backend verdicts united with rule
//! detections) and checks them against the four known pitfalls. Unresolved
//! conflicts become verification hypotheses for Step 2.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::backends::{ChatBackend, ChatRequest, Message, Sampling};
use crate::evidence::{
    evidence_weight, ContentType, CorroborationStatus, EvidenceItem, ReliabilityTier, RiskLevel,
    ScoringConfig, TimeRange,
};
use crate::prompts;
use crate::sample::Sample;
use crate::text::{self, Conflict};
use crate::tools::{self, tools_for_step, Step, ToolRequest, ToolResult, ValidatedCatalog};
use crate::unified::Disagreement;

pub const LALM_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContradictionKind {
    InterTool,
    IntraTool,
    HierarchyViolation,
    LalmVsTool,
    /// Two LALM sources disagree.
    InterSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pitfall {
    AbsenceAsProof,
    SingleSourceDismissal,
    DiarizationOversegmentation,
    NonOverlappingTranscripts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    Rule,
    Backend,
    Disagreement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contradiction {
    pub id: String,
    pub kind: ContradictionKind,
    pub item_ids: Vec<String>,
    pub description: String,
    #[serde(default)]
    pub topic: String,
    pub resolved: bool,
    #[serde(default)]
    pub pitfall_flags: BTreeSet<Pitfall>,
    pub detector: Detector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disagreement_id: Option<String>,
    /// Tool result that settled the conflict in Step 2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_by: Option<String>,
    /// The claimant the settling result sided with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub favoured: Option<String>,
}

impl Contradiction {
    pub fn involves(&self, id: &str) -> bool {
        self.item_ids.iter().any(|i| i == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub item_id: String,
    pub risk: RiskLevel,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationHypothesis {
    pub id: String,
    pub statement: String,
    pub tool_calls: Vec<ToolRequest>,
    pub contradiction_id: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HypothesisPlan {
    pub hypotheses: Vec<VerificationHypothesis>,
    /// Contradictions with no applicable segment tool; left open for
    /// argumentation.
    pub unverifiable: Vec<String>,
}

/// Quantities stated in the claim, overridden by structured tool fields.
pub fn item_quantities(item: &EvidenceItem, results: &[ToolResult]) -> BTreeMap<String, f64> {
    let mut q = text::quantities(&item.claim);
    if let Some(r) = results.iter().find(|r| r.id == item.id) {
        q.extend(r.field_quantities());
    }
    q
}

pub fn items_conflict(x: &EvidenceItem, y: &EvidenceItem, results: &[ToolResult]) -> Option<Conflict> {
    text::conflict_with_quantities(&x.claim, &item_quantities(x, results), &y.claim, &item_quantities(y, results))
}

fn result_conflict(item: &EvidenceItem, r: &ToolResult, results: &[ToolResult]) -> Option<Conflict> {
    let mut qr = text::quantities(&r.output.summary);
    qr.extend(r.field_quantities());
    text::conflict_with_quantities(&item.claim, &item_quantities(item, results), &r.output.summary, &qr)
}

/// Stage 1. Each LALM item moves at most once per run: `−adjust` on an
/// explicit conflict with a reproducible tool, else `+adjust` when its
/// content words overlap a reproducible tool summary by at least
/// `threshold` (Jaccard). Results are clamped to `[0.05, lalm cap]`.
pub fn stage1_keyword_reclassify(
    mut items: Vec<EvidenceItem>,
    tool_results: &[ToolResult],
    scoring: &ScoringConfig,
    threshold: f64,
) -> Vec<EvidenceItem> {
    let reproducible: Vec<&ToolResult> = tool_results
        .iter()
        .filter(|r| !r.is_failed() && r.tier.is_reproducible())
        .collect();
    let cap = scoring.tier_cap(ReliabilityTier::Lalm);
    for item in items.iter_mut().filter(|i| i.is_lalm() && !i.keyword_adjusted) {
        let conflicted = reproducible.iter().any(|r| result_conflict(item, r, tool_results).is_some());
        let delta = if conflicted {
            -scoring.keyword_adjust
        } else {
            let tokens = text::content_tokens(&item.claim);
            let overlaps = reproducible
                .iter()
                .any(|r| text::jaccard(&tokens, &text::content_tokens(&r.output.summary)) >= threshold);
            if overlaps { scoring.keyword_adjust } else { 0.0 }
        };
        if delta != 0.0 {
            item.confidence = (item.confidence + delta).clamp(LALM_FLOOR, cap);
            item.keyword_adjusted = true;
        }
    }
    items
}

/// Speaker-count guard: a clustering count at least three times the
/// diarization estimate is a segmentation artifact.
pub fn speaker_guard(cluster: u32, diarization: u32) -> bool {
    diarization >= 1 && cluster >= 3 * diarization
}

pub fn base_risk(tier: ReliabilityTier, status: CorroborationStatus) -> RiskLevel {
    match status {
        CorroborationStatus::Corroborated => RiskLevel::Low,
        CorroborationStatus::Disagreement => RiskLevel::High,
        CorroborationStatus::SourceSpecific if tier.is_reproducible() => RiskLevel::Low,
        CorroborationStatus::SourceSpecific => RiskLevel::Medium,
    }
}

pub fn speaker_count(result: &ToolResult) -> Option<u32> {
    result.count_field("speaker_count").or_else(|| {
        let mut q = text::quantities(&result.output.summary);
        q.extend(result.field_quantities());
        q.get("speaker").map(|v| *v as u32)
    })
}

/// Stage 2.
pub fn stage2_risk_assessment(items: &[EvidenceItem], tool_results: &[ToolResult]) -> Vec<RiskAssessment> {
    fn ok<'a>(results: &'a [ToolResult], name: &'a str) -> impl Iterator<Item = &'a ToolResult> {
        results.iter().filter(move |r| !r.is_failed() && r.request.tool == name)
    }
    let diarization = ok(tool_results, tools::DIARIZATION).filter_map(speaker_count).max();
    let artifacts: BTreeMap<&str, (u32, u32)> = match diarization {
        Some(d) => ok(tool_results, tools::SPEAKER_COUNT)
            .filter_map(|r| speaker_count(r).map(|c| (r.id.as_str(), (c, d))))
            .filter(|(_, (c, d))| speaker_guard(*c, *d))
            .collect(),
        None => BTreeMap::new(),
    };
    items
        .iter()
        .map(|item| {
            if let Some((c, d)) = artifacts.get(item.id.as_str()) {
                return RiskAssessment {
                    item_id: item.id.clone(),
                    risk: RiskLevel::SegmentationArtifact,
                    rationale: format!("clustering found {c} speakers, diarization {d}; at least three times over"),
                };
            }
            let risk = base_risk(item.tier, item.status);
            let rationale = format!("{} evidence, {:?}", item.tier, item.status).to_lowercase();
            RiskAssessment { item_id: item.id.clone(), risk, rationale }
        })
        .collect()
}

pub fn apply_risk(mut items: Vec<EvidenceItem>, assessments: &[RiskAssessment]) -> Vec<EvidenceItem> {
    let map: BTreeMap<&str, RiskLevel> = assessments.iter().map(|a| (a.item_id.as_str(), a.risk)).collect();
    for item in &mut items {
        if let Some(r) = map.get(item.id.as_str()) {
            item.risk = *r;
        }
    }
    items
}

/// Kind of a conflict between two items.
pub fn classify_kind(x: &EvidenceItem, y: &EvidenceItem, scoring: &ScoringConfig) -> ContradictionKind {
    if x.tier != y.tier {
        let (low, high) = if x.tier < y.tier { (x, y) } else { (y, x) };
        if evidence_weight(low, scoring) > evidence_weight(high, scoring) {
            return ContradictionKind::HierarchyViolation;
        }
    }
    match (x.origin.tool(), y.origin.tool()) {
        (None, None) => ContradictionKind::InterSource,
        (Some(a), Some(b)) if a == b => ContradictionKind::IntraTool,
        (Some(_), Some(_)) => ContradictionKind::InterTool,
        _ => ContradictionKind::LalmVsTool,
    }
}

fn is_transcript(item: &EvidenceItem) -> bool {
    matches!(item.origin.tool(), Some(t) if t == tools::TRANSCRIPTION || t == tools::DIARIZATION)
}

/// Flags pitfalls and auto-resolves the ones that are not real conflicts.
pub fn check_pitfalls(c: &mut Contradiction, items: &BTreeMap<&str, &EvidenceItem>) {
    let members: Vec<&EvidenceItem> = c.item_ids.iter().filter_map(|id| items.get(id.as_str()).copied()).collect();
    if members.len() < 2 {
        return;
    }
    let ranges: Vec<Option<TimeRange>> = members.iter().map(|m| m.time_range).collect();
    let disjoint = ranges.iter().all(Option::is_some)
        && ranges.iter().enumerate().all(|(i, a)| {
            ranges.iter().skip(i + 1).all(|b| !a.unwrap().overlaps(&b.unwrap()))
        });
    if disjoint && members.iter().any(|m| is_transcript(m)) {
        c.pitfall_flags.insert(Pitfall::NonOverlappingTranscripts);
        c.resolved = true;
    }
    if members.iter().any(|m| m.risk == RiskLevel::SegmentationArtifact) {
        c.pitfall_flags.insert(Pitfall::DiarizationOversegmentation);
        c.resolved = true;
    }
    for m in &members {
        let negated = text::negated_terms(&m.claim);
        if m.origin.tool().is_some() && !negated.is_empty() {
            let others_assert = members
                .iter()
                .filter(|o| o.id != m.id)
                .any(|o| !negated.is_disjoint(&text::content_tokens(&o.claim)));
            if others_assert {
                c.pitfall_flags.insert(Pitfall::AbsenceAsProof);
            }
        }
    }
    let reproducible = members.iter().any(|m| m.tier.is_reproducible());
    let single = members
        .iter()
        .any(|m| m.is_lalm() && m.status == CorroborationStatus::SourceSpecific);
    if single && !reproducible {
        c.pitfall_flags.insert(Pitfall::SingleSourceDismissal);
    }
}

fn topic_of(conflict: &Conflict) -> String {
    match conflict {
        Conflict::Numeric { unit, .. } => unit.clone(),
        Conflict::Negation { term } => term.clone(),
    }
}

fn describe(conflict: &Conflict, x: &EvidenceItem, y: &EvidenceItem) -> String {
    match conflict {
        Conflict::Numeric { unit, left, right } => format!(
            "{} reports {left} {unit}(s), {} reports {right}",
            x.origin.label(),
            y.origin.label()
        ),
        Conflict::Negation { term } => format!(
            "{} and {} disagree on whether {term} is present",
            x.origin.label(),
            y.origin.label()
        ),
    }
}

/// Rule-based detection: explicit conflicts between any two items, except
/// two observations of the same source and two segments of one tool.
pub fn detect_rule_contradictions(
    items: &[EvidenceItem],
    tool_results: &[ToolResult],
    scoring: &ScoringConfig,
) -> Vec<Contradiction> {
    let mut out = Vec::new();
    for (i, x) in items.iter().enumerate() {
        for y in &items[i + 1..] {
            if x.is_lalm() && y.is_lalm() && x.origin == y.origin {
                continue;
            }
            if let Some(conflict) = items_conflict(x, y, tool_results) {
                out.push(Contradiction {
                    id: String::new(),
                    kind: classify_kind(x, y, scoring),
                    item_ids: vec![x.id.clone(), y.id.clone()],
                    description: describe(&conflict, x, y),
                    topic: topic_of(&conflict),
                    resolved: false,
                    pitfall_flags: BTreeSet::new(),
                    detector: Detector::Rule,
                    disagreement_id: None,
                    resolved_by: None,
                    favoured: None,
                });
            }
        }
    }
    out
}

pub fn detect_prompt(items: &[EvidenceItem], sample: &Sample) -> String {
    let mut out = format!(
        "Task: {}\nAudio: {}\nQuestion: {}\n\nItems:\n",
        prompts::TASK_CONTRADICTIONS,
        sample.audio,
        sample.question
    );
    for i in items {
        let range = i.time_range.map(|r| format!(", {r}")).unwrap_or_default();
        out.push_str(&format!(
            "[{}] ({}, {}, confidence {:.2}{range}) {}\n",
            i.id,
            i.origin.label(),
            i.tier,
            i.confidence,
            i.claim
        ));
    }
    out.push_str(
        "\nList conflicting items. Reply with a JSON array; each entry: {\"kind\": \"inter_tool\" | \
         \"intra_tool\" | \"hierarchy_violation\" | \"lalm_vs_tool\" | \"inter_source\", \"item_ids\": [ids], \
         \"description\": text, \"pitfalls\": [\"absence_as_proof\" | \"single_source_dismissal\" | \
         \"diarization_oversegmentation\" | \"non_overlapping_transcripts\"], \"resolved\": bool}. \
         Absence of a detection is not proof of absence. Reply [] when nothing conflicts.\n",
    );
    out
}

#[derive(Deserialize)]
struct BackendContradiction {
    kind: ContradictionKind,
    item_ids: Vec<String>,
    #[serde(default)]
    description: String,
    #[serde(default)]
    pitfalls: Vec<Pitfall>,
    #[serde(default)]
    resolved: bool,
}

pub struct Stage3Context<'a> {
    pub sample: &'a Sample,
    pub scoring: &'a ScoringConfig,
    pub sampling: Sampling,
    pub endpoint: &'a str,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Stage3Outcome {
    pub contradictions: Vec<Contradiction>,
    /// The backend reply was unusable; rules alone decided.
    pub rule_only: bool,
}

/// Stage 3: backend verdicts united with rule detections and open
/// disagreements, deduplicated by item set, pitfall-checked.
pub fn stage3_detect(
    items: &[EvidenceItem],
    tool_results: &[ToolResult],
    disagreements: &[Disagreement],
    backend: &dyn ChatBackend,
    ctx: &Stage3Context<'_>,
) -> Stage3Outcome {
    let request = ChatRequest::new(
        ctx.endpoint,
        &ctx.sample.id,
        vec![
            Message::system("You audit audio evidence for contradictions."),
            Message::user(detect_prompt(items, ctx.sample)),
        ],
    )
    .with_sampling(ctx.sampling);
    let reply = backend.complete(&request).ok().and_then(|r| prompts::extract_json_array(&r.text));
    let rule_only = reply.is_none();
    let index: BTreeMap<&str, &EvidenceItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();

    let mut found = detect_rule_contradictions(items, tool_results, ctx.scoring);
    let key = |ids: &[String]| ids.iter().cloned().collect::<BTreeSet<String>>();
    let mut seen: BTreeSet<BTreeSet<String>> = found.iter().map(|c| key(&c.item_ids)).collect();

    for v in reply.unwrap_or_default() {
        let Ok(b) = serde_json::from_value::<BackendContradiction>(v) else { continue };
        let ids: Vec<String> = b.item_ids.into_iter().filter(|id| index.contains_key(id.as_str())).collect();
        if ids.len() < 2 || !seen.insert(key(&ids)) {
            continue;
        }
        let (x, y) = (index[ids[0].as_str()], index[ids[1].as_str()]);
        let kind = match b.kind {
            ContradictionKind::HierarchyViolation => classify_kind(x, y, ctx.scoring),
            k => k,
        };
        found.push(Contradiction {
            id: String::new(),
            kind,
            item_ids: ids,
            description: b.description,
            topic: String::new(),
            resolved: b.resolved,
            pitfall_flags: b.pitfalls.into_iter().collect(),
            detector: Detector::Backend,
            disagreement_id: None,
            resolved_by: None,
            favoured: None,
        });
    }

    for d in disagreements.iter().filter(|d| !d.resolved) {
        let dk = key(&d.item_ids);
        if let Some(c) = found.iter_mut().find(|c| key(&c.item_ids) == dk) {
            c.disagreement_id = Some(d.id.clone());
            continue;
        }
        let members: Vec<&EvidenceItem> = d.item_ids.iter().filter_map(|id| index.get(id.as_str()).copied()).collect();
        if members.len() < 2 {
            continue;
        }
        seen.insert(dk);
        found.push(Contradiction {
            id: String::new(),
            kind: classify_kind(members[0], members[1], ctx.scoring),
            item_ids: d.item_ids.clone(),
            description: format!("sources disagree on {}: {}", d.topic, d.credibility_note),
            topic: d.topic.clone(),
            resolved: false,
            pitfall_flags: BTreeSet::new(),
            detector: Detector::Disagreement,
            disagreement_id: Some(d.id.clone()),
            resolved_by: None,
            favoured: None,
        });
    }

    for (n, c) in found.iter_mut().enumerate() {
        c.id = format!("c{}", n + 1);
        check_pitfalls(c, &index);
    }
    Stage3Outcome { contradictions: found, rule_only }
}

/// Non-dismissal: an LALM item becomes `High` only when reproducible tool
/// evidence actively contradicts it: an open contradiction (not an
/// absence-as-proof one) against a reproducible tool item, or a conflict a
/// reproducible targeted measurement settled against it. Any other contradicted or high-risk LALM item
/// becomes `Speculative` and stays in the evidence set.
pub fn apply_non_dismissal(mut items: Vec<EvidenceItem>, contradictions: &[Contradiction]) -> Vec<EvidenceItem> {
    let tiers: BTreeMap<String, (ReliabilityTier, bool)> = items
        .iter()
        .map(|i| (i.id.clone(), (i.tier, i.is_lalm())))
        .collect();
    for item in items.iter_mut().filter(|i| i.is_lalm()) {
        let involved: Vec<&Contradiction> = contradictions.iter().filter(|c| c.involves(&item.id)).collect();
        let reproducible_tool = |id: &String| matches!(tiers.get(id), Some((tier, false)) if tier.is_reproducible());
        let active = involved.iter().any(|c| {
            let open = !c.resolved
                && !c.pitfall_flags.contains(&Pitfall::AbsenceAsProof)
                && c.item_ids.iter().any(|other| other != &item.id && reproducible_tool(other));
            // lost a conflict that a reproducible targeted measurement settled
            let lost = c.resolved
                && c.favoured.as_ref().is_some_and(|f| f != &item.id)
                && c.resolved_by.as_ref().is_some_and(reproducible_tool);
            open || lost
        });
        if active {
            item.risk = RiskLevel::High;
        } else if !involved.is_empty() || item.risk == RiskLevel::High {
            item.risk = RiskLevel::Speculative;
        }
    }
    items
}

const TOPIC_TOOLS: &[(&str, &[&str])] = &[
    (tools::DIARIZATION, &["speaker", "voice", "talker", "person", "people", "participant", "conversation", "dialogue"]),
    (tools::INSTRUMENTS, &[
        "instrument", "piano", "guitar", "violin", "drum", "bass", "flute", "saxophone", "trumpet",
        "cello", "organ", "synth", "synthesizer", "string", "percussion", "horn", "clarinet",
    ]),
    (tools::BEAT_ONSET, &["beat", "tempo", "bpm", "rhythm", "onset", "meter", "pulse"]),
    (tools::HARMONIC, &["chord", "harmony", "harmonic", "key", "major", "minor", "tonality", "scale"]),
    (tools::TRANSCRIPTION, &["say", "said", "word", "speech", "spoken", "transcript", "lyric", "utterance", "name", "language", "sentence"]),
    (tools::ENERGY, &["loud", "quiet", "volume", "energy", "silence", "silent", "fade", "crescendo", "intensity"]),
    (tools::EVENT_SEQUENCE, &[
        "sound", "event", "door", "dog", "bark", "knock", "alarm", "footstep", "car", "bell",
        "siren", "applause", "laugh", "cough", "glass", "bird", "engine", "horn", "rain", "thunder",
    ]),
];

fn topic_tool<'a>(text_: &str, offered: &BTreeSet<&'a str>) -> Option<&'a str> {
    let mut tokens = text::content_tokens(text_);
    tokens.extend(text::raw_tokens(text_).iter().map(|t| text::stem(t)));
    TOPIC_TOOLS
        .iter()
        .filter(|(_, words)| words.iter().any(|w| tokens.contains(*w)))
        .find_map(|(tool, _)| offered.get(tool).copied())
}

/// Segment tool for a conflict, restricted to the offered names. The
/// conflict topic decides first, then the surrounding text; unmatched
/// conflicts fall back to temporal segmentation.
pub fn hypothesis_tool<'a>(topic: &str, context: &str, offered: &BTreeSet<&'a str>) -> Option<&'a str> {
    topic_tool(topic, offered)
        .or_else(|| topic_tool(context, offered))
        .or_else(|| offered.get(tools::TEMPORAL_SEGMENTS).copied())
}

/// Union of the members' ranges, padded and clipped; members without a
/// range span the whole clip.
pub fn hypothesis_range(members: &[&EvidenceItem], duration: f64, pad: f64) -> TimeRange {
    let whole = TimeRange { start: 0.0, end: duration };
    let range = members
        .iter()
        .map(|m| m.time_range.unwrap_or(whole))
        .reduce(|a, b| a.union(&b))
        .unwrap_or(whole);
    range.padded(pad, duration)
}

pub struct HypothesisContext<'a> {
    pub catalog: &'a ValidatedCatalog,
    pub content: ContentType,
    pub audio: &'a str,
    pub duration: f64,
    pub pad_s: f64,
}

/// One hypothesis per unresolved contradiction with an applicable Step-2
/// tool; the rest are reported as unverifiable.
pub fn generate_hypotheses(
    contradictions: &[Contradiction],
    items: &[EvidenceItem],
    ctx: &HypothesisContext<'_>,
) -> HypothesisPlan {
    let offered: BTreeSet<&str> = tools_for_step(ctx.catalog, Step::Step2, ctx.content)
        .into_iter()
        .map(|t| t.name.as_str())
        .collect();
    let index: BTreeMap<&str, &EvidenceItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut plan = HypothesisPlan::default();
    for c in contradictions.iter().filter(|c| !c.resolved) {
        let members: Vec<&EvidenceItem> = c.item_ids.iter().filter_map(|id| index.get(id.as_str()).copied()).collect();
        let mut context = c.description.clone();
        for m in &members {
            context.push(' ');
            context.push_str(&m.claim);
        }
        let Some(tool) = hypothesis_tool(&c.topic, &context, &offered) else {
            plan.unverifiable.push(c.id.clone());
            continue;
        };
        let range = hypothesis_range(&members, ctx.duration, ctx.pad_s);
        let claims: Vec<String> = members.iter().map(|m| format!("\"{}\"", m.claim)).collect();
        plan.hypotheses.push(VerificationHypothesis {
            id: format!("h{}", plan.hypotheses.len() + 1),
            statement: format!("{tool} over {range} settles {}", claims.join(" vs ")),
            tool_calls: vec![ToolRequest::new(tool, ctx.audio).with_range(range)],
            contradiction_id: c.id.clone(),
        });
    }
    plan
}
