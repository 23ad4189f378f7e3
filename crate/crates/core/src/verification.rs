//! Two-step verification loop.
//!
//! Step 1 lets the reasoner request whole-audio tools for up to three rounds
//! while the evidence is weak or sources disagree. The three contradiction
//! stages then run over everything gathered, and Step 2 runs targeted
//! segment tools to settle the hypotheses they produce.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backends::{ChatBackend, ChatRequest, Message, Sampling, ToolBackend};
use crate::clock::Clock;
use crate::contradiction::{
    self, Contradiction, HypothesisContext, HypothesisPlan, RiskAssessment, Stage3Context,
};
use crate::evidence::{
    evidence_weight, score_evidence, ContentType, CorroborationStatus, EvidenceItem, EvidenceOrigin,
    RiskLevel, ScoringConfig, TimeRange,
};
use crate::exec::{self, Execution};
use crate::prompts;
use crate::sample::{self, Sample};
use crate::text;
use crate::tools::{
    self, cap_tool_confidence, tools_for_step, Step, ToolOutput, ToolRequest, ToolResult, ToolSpec, ValidatedCatalog,
};
use crate::unified::{Disagreement, UnifiedAnalysis};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopLimits {
    pub step1_rounds: u32,
    pub proposals_per_round: usize,
    pub step2_rounds: u32,
    /// Direct-answer evidence weaker than this triggers Step 1.
    pub weak_evidence: f64,
    pub keyword_threshold: f64,
    pub hypothesis_pad_s: f64,
}

impl Default for LoopLimits {
    fn default() -> Self {
        Self {
            step1_rounds: 3,
            proposals_per_round: 4,
            step2_rounds: 2,
            weak_evidence: 0.45,
            keyword_threshold: 0.30,
            hypothesis_pad_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ConfidenceSufficient,
    NoNewTools,
    RoundLimit,
    AllHypothesesChecked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub step: Step,
    pub round: u32,
    pub requested: Vec<ToolRequest>,
    /// Ids of the results this round produced.
    pub executed: Vec<String>,
    #[serde(default)]
    pub duplicates: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<String>,
    pub started_ms: u64,
    pub finished_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub items: Vec<EvidenceItem>,
    pub tool_results: Vec<ToolResult>,
    pub disagreements: Vec<Disagreement>,
    pub contradictions: Vec<Contradiction>,
    pub risk: Vec<RiskAssessment>,
    pub hypotheses: HypothesisPlan,
    pub rounds: Vec<RoundLog>,
    pub step1_stop: StopReason,
    pub step2_stop: StopReason,
    /// The contradiction reply was unusable; rules alone decided.
    pub rule_only_contradictions: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl VerificationOutcome {
    pub fn rounds_in(&self, step: Step) -> usize {
        self.rounds.iter().filter(|r| r.step == step).count()
    }
}

/// Verification is needed while sources disagree or no direct-answer
/// evidence reaches the weak-evidence weight.
pub fn needs_verification(
    items: &[EvidenceItem],
    disagreements: &[Disagreement],
    scoring: &ScoringConfig,
    weak_evidence: f64,
) -> bool {
    if disagreements.iter().any(|d| !d.resolved) {
        return true;
    }
    let best = items
        .iter()
        .filter(|i| i.direct_answer)
        .map(|i| evidence_weight(i, scoring))
        .fold(0.0, f64::max);
    best < weak_evidence
}

fn item_line(i: &EvidenceItem) -> String {
    format!(
        "[{}] ({}, {}, {:?}, confidence {:.2}) {}",
        i.id,
        i.origin.label(),
        i.tier,
        i.status,
        i.confidence,
        i.claim
    )
    .replace("Corroborated", "corroborated")
    .replace("SourceSpecific", "source-specific")
    .replace("Disagreement", "disagreement")
}

pub fn propose_prompt(
    sample: &Sample,
    round: u32,
    items: &[EvidenceItem],
    offered: &[&ToolSpec],
    max: usize,
) -> String {
    let mut out = format!(
        "Task: {}\nAudio: {}\nRound: {round}\nQuestion: {}\n{}\nEvidence so far:\n",
        prompts::TASK_PROPOSE,
        sample.audio,
        sample.question,
        prompts::choice_block(&sample.choices)
    );
    for i in items {
        out.push_str(&item_line(i));
        out.push('\n');
    }
    out.push_str("\nAvailable tools:\n");
    for t in offered {
        out.push_str(&format!("- {} ({}, {})\n", t.name, t.tier, t.scope));
    }
    out.push_str(&format!(
        "\nRequest the tools that would best check or extend this evidence. Reply with a JSON array of at most \
         {max} entries {{\"tool\": name, \"params\": {{}}, \"time_range\": {{\"start\": s, \"end\": e}} or null}}. \
         Reply [] when no further tool would help.\n"
    ));
    out
}

#[derive(Deserialize)]
struct Proposal {
    tool: String,
    #[serde(default)]
    params: BTreeMap<String, Value>,
    #[serde(default)]
    time_range: Option<TimeRange>,
}

/// Valid proposals (known, offered tools) and the rejected entries.
pub fn parse_proposals(
    reply: &str,
    sample: &Sample,
    offered: &[&ToolSpec],
    max: usize,
) -> (Vec<ToolRequest>, Vec<String>) {
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for v in prompts::extract_json_array(reply).unwrap_or_default() {
        let raw = v.to_string();
        let Ok(p) = serde_json::from_value::<Proposal>(v) else {
            rejected.push(raw);
            continue;
        };
        let Some(spec) = offered.iter().find(|t| t.name.eq_ignore_ascii_case(p.tool.trim())) else {
            rejected.push(format!("{} (not offered)", p.tool));
            continue;
        };
        let mut req = ToolRequest::new(&spec.name, &sample.audio);
        req.params = p
            .params
            .into_iter()
            .map(|(k, v)| (k, v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string())))
            .collect();
        if spec.scope.segment() {
            req.time_range = p
                .time_range
                .and_then(|r| TimeRange::new(r.start.max(0.0), r.end.min(sample.duration_s)));
        }
        if accepted.len() < max {
            accepted.push(req);
        } else {
            rejected.push(format!("{} (over the per-round limit)", spec.name));
        }
    }
    (accepted, rejected)
}

/// Runs tool calls concurrently; failures become failed results.
pub fn execute_tools(
    requests: &[ToolRequest],
    first_id: usize,
    backend: &dyn ToolBackend,
    catalog: &ValidatedCatalog,
    sample: &Sample,
    content: ContentType,
    scoring: &ScoringConfig,
    execution: Execution,
) -> Vec<ToolResult> {
    let indexed: Vec<(usize, &ToolRequest)> = requests.iter().enumerate().collect();
    exec::map(&indexed, execution, |(i, req)| {
        let id = format!("t{}", first_id + i);
        let Some(spec) = catalog.get(&req.tool) else {
            return ToolResult::failed(id, (*req).clone(), crate::evidence::ReliabilityTier::Heuristic, "not in catalog".into());
        };
        match backend.invoke(req) {
            Ok(raw) => {
                let relevance = raw
                    .relevance
                    .unwrap_or_else(|| sample::lexical_relevance(&raw.summary, &sample.question, &sample.choices))
                    .clamp(0.0, 1.0);
                let result = ToolResult {
                    id,
                    request: (*req).clone(),
                    tier: spec.tier,
                    output: ToolOutput { summary: raw.summary, fields: raw.fields },
                    raw_confidence: raw.confidence,
                    capped_confidence: 0.0,
                    relevance,
                    duration_ms: raw.duration_ms,
                    error: None,
                };
                cap_tool_confidence(result, spec, content, scoring)
            }
            Err(e) => ToolResult::failed(id, (*req).clone(), spec.tier, e.to_string()),
        }
    })
}

/// Evidence item for a successful tool result. The capped confidence is the
/// base; corroboration means a near-duplicate item with no explicit conflict.
pub fn tool_evidence_item(
    result: &ToolResult,
    spec: &ToolSpec,
    sample: &Sample,
    content: ContentType,
    existing: &[EvidenceItem],
    scoring: &ScoringConfig,
    threshold: f64,
) -> EvidenceItem {
    let tokens = text::content_tokens(&result.output.summary);
    let mut quantities = text::quantities(&result.output.summary);
    quantities.extend(result.field_quantities());
    let corroborated_by: Vec<String> = existing
        .iter()
        .filter(|i| {
            text::jaccard(&tokens, &text::content_tokens(&i.claim)) >= threshold
                && text::conflict_with_quantities(&result.output.summary, &quantities, &i.claim, &text::quantities(&i.claim))
                    .is_none()
        })
        .map(|i| i.id.clone())
        .collect();
    let corroborated = !corroborated_by.is_empty();
    let direct = !sample::supported_choices(&result.output.summary, &sample.choices).is_empty();
    let confidence = score_evidence(result.capped_confidence, result.tier, corroborated, direct, 1.0, scoring)
        .unwrap_or(result.capped_confidence);
    EvidenceItem {
        id: result.id.clone(),
        origin: EvidenceOrigin::ToolMeasurement(result.request.tool.clone()),
        claim: result.output.summary.clone(),
        tier: result.tier,
        status: if corroborated { CorroborationStatus::Corroborated } else { CorroborationStatus::SourceSpecific },
        confidence,
        relevance: result.relevance,
        risk: RiskLevel::Low,
        corroborated_by,
        direct_answer: direct,
        domain_factor: scoring.domain_factor(&spec.domains, content),
        time_range: result.request.time_range,
        assessed_confidence: None,
        keyword_adjusted: false,
    }
}

pub struct VerifyContext<'a> {
    pub sample: &'a Sample,
    pub catalog: &'a ValidatedCatalog,
    pub scoring: &'a ScoringConfig,
    pub content: ContentType,
    pub limits: LoopLimits,
    pub sampling: Sampling,
    pub endpoint: &'a str,
    pub clock: &'a dyn Clock,
    pub execution: Execution,
}

struct State<'a> {
    ctx: &'a VerifyContext<'a>,
    tools: &'a dyn ToolBackend,
    items: Vec<EvidenceItem>,
    results: Vec<ToolResult>,
    seen: BTreeSet<String>,
    rounds: Vec<RoundLog>,
}

impl State<'_> {
    /// Executes the calls not seen before; logs the round.
    fn run_round(&mut self, step: Step, round: u32, requested: Vec<ToolRequest>, rejected: Vec<String>) -> usize {
        let started_ms = self.ctx.clock.now_ms();
        let mut fresh = Vec::new();
        for r in &requested {
            if self.seen.insert(r.call_digest()) {
                fresh.push(r.clone());
            }
        }
        let ctx = self.ctx;
        let new = execute_tools(
            &fresh,
            self.results.len() + 1,
            self.tools,
            ctx.catalog,
            ctx.sample,
            ctx.content,
            ctx.scoring,
            ctx.execution,
        );
        for r in new.iter().filter(|r| !r.is_failed()) {
            if let Some(spec) = ctx.catalog.get(&r.request.tool) {
                let item = tool_evidence_item(r, spec, ctx.sample, ctx.content, &self.items, ctx.scoring, ctx.limits.keyword_threshold);
                self.items.push(item);
            }
        }
        let executed = new.iter().map(|r| r.id.clone()).collect();
        self.results.extend(new);
        self.rounds.push(RoundLog {
            step,
            round,
            duplicates: requested.len() - fresh.len(),
            requested,
            executed,
            rejected,
            started_ms,
            finished_ms: self.ctx.clock.now_ms(),
        });
        fresh.len()
    }
}

/// The targeted result sides with exactly one claimant and is more
/// confident than every claimant.
pub fn adjudicate(result: &ToolResult, members: &[&EvidenceItem], threshold: f64) -> Option<String> {
    if result.is_failed() || members.iter().any(|m| result.capped_confidence <= m.confidence) {
        return None;
    }
    let mut rq = text::quantities(&result.output.summary);
    rq.extend(result.field_quantities());
    let rt = text::content_tokens(&result.output.summary);
    let sides: Vec<&&EvidenceItem> = members
        .iter()
        .filter(|m| {
            let mq = text::quantities(&m.claim);
            if text::conflict_with_quantities(&m.claim, &mq, &result.output.summary, &rq).is_some() {
                return false;
            }
            let shared_value = mq.iter().any(|(u, v)| rq.get(u).is_some_and(|w| (v - w).abs() < 1e-9));
            shared_value || text::jaccard(&text::content_tokens(&m.claim), &rt) >= threshold
        })
        .collect();
    match sides.as_slice() {
        [one] => Some(one.id.clone()),
        _ => None,
    }
}

/// Second Step-2 pass for an unsettled call: the same tool over the whole
/// clip, else temporal segmentation over the original then the whole range,
/// whichever has not run yet.
fn second_pass(call: &ToolRequest, whole: TimeRange, offered: &BTreeSet<&str>, seen: &BTreeSet<String>) -> ToolRequest {
    let widened = call.clone().with_range(whole);
    let mut candidates = vec![widened.clone()];
    if offered.contains(tools::TEMPORAL_SEGMENTS) {
        let mut seg = call.clone();
        seg.tool = tools::TEMPORAL_SEGMENTS.into();
        candidates.push(seg.clone());
        candidates.push(seg.with_range(whole));
    }
    candidates
        .into_iter()
        .find(|c| !seen.contains(&c.call_digest()))
        .unwrap_or(widened)
}

/// Runs Step 1, the contradiction stages and Step 2.
pub fn run_verification(
    unified: UnifiedAnalysis,
    reasoner: &dyn ChatBackend,
    tools: &dyn ToolBackend,
    ctx: &VerifyContext<'_>,
) -> VerificationOutcome {
    let limits = ctx.limits;
    let mut disagreements = unified.disagreements;
    let mut warnings = Vec::new();
    let mut st = State { ctx, tools, items: unified.items, results: Vec::new(), seen: BTreeSet::new(), rounds: Vec::new() };

    // Step 1
    let offered = tools_for_step(ctx.catalog, Step::Step1, ctx.content);
    let mut step1_stop = StopReason::ConfidenceSufficient;
    if needs_verification(&st.items, &disagreements, ctx.scoring, limits.weak_evidence) {
        step1_stop = StopReason::RoundLimit;
        for round in 1..=limits.step1_rounds {
            let prompt = propose_prompt(ctx.sample, round, &st.items, &offered, limits.proposals_per_round);
            let request = ChatRequest::new(
                ctx.endpoint,
                &ctx.sample.id,
                vec![Message::system("You plan audio tool calls to verify evidence."), Message::user(prompt)],
            )
            .with_sampling(ctx.sampling);
            let reply = match reasoner.complete(&request) {
                Ok(r) => r.text,
                Err(e) => {
                    warnings.push(format!("tool proposal round {round} failed: {e}"));
                    String::new()
                }
            };
            let (requested, rejected) = parse_proposals(&reply, ctx.sample, &offered, limits.proposals_per_round);
            if st.run_round(Step::Step1, round, requested, rejected) == 0 {
                step1_stop = StopReason::NoNewTools;
                break;
            }
            if !needs_verification(&st.items, &disagreements, ctx.scoring, limits.weak_evidence) {
                step1_stop = StopReason::ConfidenceSufficient;
                break;
            }
        }
    }

    // contradiction stages
    let items = contradiction::stage1_keyword_reclassify(std::mem::take(&mut st.items), &st.results, ctx.scoring, limits.keyword_threshold);
    let risk = contradiction::stage2_risk_assessment(&items, &st.results);
    st.items = contradiction::apply_risk(items, &risk);
    let stage3 = contradiction::stage3_detect(
        &st.items,
        &st.results,
        &disagreements,
        reasoner,
        &Stage3Context { sample: ctx.sample, scoring: ctx.scoring, sampling: ctx.sampling, endpoint: ctx.endpoint },
    );
    if stage3.rule_only {
        warnings.push("contradiction reply unusable; rule detection only".into());
    }
    let mut contradictions = stage3.contradictions;
    let hyp_ctx = HypothesisContext {
        catalog: ctx.catalog,
        content: ctx.content,
        audio: &ctx.sample.audio,
        duration: ctx.sample.duration_s,
        pad_s: limits.hypothesis_pad_s,
    };
    let hypotheses = contradiction::generate_hypotheses(&contradictions, &st.items, &hyp_ctx);

    // Step 2
    let mut step2_stop = StopReason::AllHypothesesChecked;
    let mut open: Vec<usize> = (0..hypotheses.hypotheses.len()).collect();
    let whole = TimeRange { start: 0.0, end: ctx.sample.duration_s };
    let step2_names: BTreeSet<&str> = tools_for_step(ctx.catalog, Step::Step2, ctx.content)
        .into_iter()
        .map(|t| t.name.as_str())
        .collect();
    for round in 1..=limits.step2_rounds {
        if open.is_empty() {
            break;
        }
        let calls: Vec<Vec<ToolRequest>> = open
            .iter()
            .map(|&h| {
                let base = &hypotheses.hypotheses[h].tool_calls;
                if round == 1 {
                    base.clone()
                } else {
                    base.iter().map(|c| second_pass(c, whole, &step2_names, &st.seen)).collect()
                }
            })
            .collect();
        let new = st.run_round(Step::Step2, round, calls.iter().flatten().cloned().collect(), Vec::new());
        let mut settled = Vec::new();
        for (&h, hcalls) in open.iter().zip(&calls) {
            let hyp = &hypotheses.hypotheses[h];
            let Some(c) = contradictions.iter_mut().find(|c| c.id == hyp.contradiction_id) else { continue };
            let members: Vec<&EvidenceItem> = c.item_ids.iter().filter_map(|id| st.items.iter().find(|i| &i.id == id)).collect();
            let digests: BTreeSet<String> = hcalls.iter().map(ToolRequest::call_digest).collect();
            let verdict = st
                .results
                .iter()
                .filter(|r| digests.contains(&r.request.call_digest()))
                .find_map(|r| adjudicate(r, &members, limits.keyword_threshold).map(|f| (r.id.clone(), f)));
            if let Some((by, favoured)) = verdict {
                c.resolved = true;
                c.resolved_by = Some(by);
                c.favoured = Some(favoured);
                if let Some(d) = c.disagreement_id.as_ref().and_then(|id| disagreements.iter_mut().find(|d| &d.id == id)) {
                    d.resolved = true;
                }
                settled.push(h);
            }
        }
        open.retain(|h| !settled.contains(h));
        if open.is_empty() {
            step2_stop = StopReason::AllHypothesesChecked;
            break;
        }
        if new == 0 && settled.is_empty() {
            step2_stop = StopReason::NoNewTools;
            break;
        }
        step2_stop = StopReason::RoundLimit;
    }

    let items = contradiction::apply_non_dismissal(std::mem::take(&mut st.items), &contradictions);
    VerificationOutcome {
        items,
        tool_results: st.results,
        disagreements,
        contradictions,
        risk,
        hypotheses,
        rounds: st.rounds,
        step1_stop,
        step2_stop,
        rule_only_contradictions: stage3.rule_only,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::{ReliabilityTier, SourceId};
    use crate::tools::build_default_catalog;

    fn sample() -> Sample {
        Sample::new("s", "a.wav", 30.0, "How many speakers?", &["one speaker", "two speakers", "three speakers"])
    }

    fn lalm(id: &str, claim: &str, conf: f64, direct: bool) -> EvidenceItem {
        EvidenceItem {
            id: id.into(),
            origin: EvidenceOrigin::LalmObservation(SourceId::new("a")),
            claim: claim.into(),
            tier: ReliabilityTier::Lalm,
            status: CorroborationStatus::SourceSpecific,
            confidence: conf,
            relevance: 1.0,
            risk: RiskLevel::Low,
            corroborated_by: vec![],
            direct_answer: direct,
            domain_factor: 1.0,
            time_range: None,
            assessed_confidence: None,
            keyword_adjusted: false,
        }
    }

    #[test]
    fn trigger_rule() {
        let cfg = ScoringConfig::default();
        // 0.40 × 0.70 × 1 = 0.28 < 0.45
        assert!(needs_verification(&[lalm("a", "x", 0.70, true)], &[], &cfg, 0.45));
        let mut strong = lalm("a", "x", 0.70, true);
        strong.tier = ReliabilityTier::Analytic;
        strong.confidence = 0.9;
        assert!(!needs_verification(&[strong.clone()], &[], &cfg, 0.45));
        let d = Disagreement { id: "d1".into(), item_ids: vec![], topic: "t".into(), credibility_note: String::new(), resolved: false };
        assert!(needs_verification(&[strong], &[d], &cfg, 0.45));
        assert!(needs_verification(&[], &[], &cfg, 0.45));
    }

    #[test]
    fn proposals_are_filtered_and_capped() {
        let catalog = build_default_catalog().validate().unwrap();
        let offered = tools_for_step(&catalog, Step::Step1, ContentType::Speech);
        let names: Vec<String> = offered.iter().map(|t| format!("{{\"tool\": \"{}\"}}", t.name)).collect();
        let reply = format!("[{}, {{\"tool\": \"made up\"}}]", names[..6].join(", "));
        let (ok, rejected) = parse_proposals(&reply, &sample(), &offered, 4);
        assert_eq!(ok.len(), 4);
        assert_eq!(rejected.len(), 3);
    }

    fn result(summary: &str, fields: &[(&str, u64)], capped: f64) -> ToolResult {
        ToolResult {
            id: "t9".into(),
            request: ToolRequest::new(crate::tools::DIARIZATION, "a.wav"),
            tier: ReliabilityTier::Probabilistic,
            output: ToolOutput {
                summary: summary.into(),
                fields: fields.iter().map(|(k, v)| (k.to_string(), serde_json::json!(v))).collect(),
            },
            raw_confidence: capped,
            capped_confidence: capped,
            relevance: 1.0,
            duration_ms: 0,
            error: None,
        }
    }

    #[test]
    fn adjudication_needs_confidence_and_one_side() {
        let a = lalm("a", "three speakers", 0.6, true);
        let b = lalm("b", "two speakers", 0.6, true);
        let r = result("two speakers take turns", &[("speaker_count", 2)], 0.75);
        assert_eq!(adjudicate(&r, &[&a, &b], 0.3), Some("b".into()));
        let weak = result("two speakers take turns", &[("speaker_count", 2)], 0.55);
        assert_eq!(adjudicate(&weak, &[&a, &b], 0.3), None);
        let neither = result("music only", &[], 0.75);
        assert_eq!(adjudicate(&neither, &[&a, &b], 0.3), None);
    }

    #[test]
    fn tool_items_score_from_capped_confidence() {
        let cfg = ScoringConfig::default();
        let catalog = build_default_catalog().validate().unwrap();
        let spec = catalog.get(crate::tools::DIARIZATION).unwrap();
        let r = result("two speakers take turns", &[("speaker_count", 2)], 0.50);
        let existing = [lalm("a", "two speakers take turns talking", 0.6, true)];
        let item = tool_evidence_item(&r, spec, &sample(), ContentType::Speech, &existing, &cfg, 0.3);
        assert_eq!(item.corroborated_by, vec!["a".to_string()]);
        // 0.50 × 1.5 × 1.3 capped at 0.75
        assert!((item.confidence - 0.75).abs() < 1e-12);
        assert!(item.direct_answer);
        let alone = tool_evidence_item(&r, spec, &sample(), ContentType::Speech, &[], &cfg, 0.3);
        assert!((alone.confidence - 0.65).abs() < 1e-12);
    }
}
