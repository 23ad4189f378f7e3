//! Answer selection and written reasoning over the consolidated evidence.
//!
//! Argumentation only ever sees a [`RedactedBundle`], which carries no
//! tentative predictions from the source models.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::backends::{ChatBackend, ChatRequest, Message, Sampling};
use crate::contradiction::{Contradiction, VerificationHypothesis};
use crate::evidence::{evidence_weight, ContentType, EvidenceItem, Observation, RiskLevel, ScoringConfig, SourceId};
use crate::prompts;
use crate::sample::{self, Choice};
use crate::serde_util;
use crate::text;
use crate::tools::ToolResult;
use crate::unified::Disagreement;

pub const REASONING_SECTIONS: [&str; 7] = [
    "What is heard",
    "Evidence synthesis",
    "Conflict resolution",
    "Reliability assessment",
    "Tool cross-references",
    "Per-choice evaluation",
    "Conclusion",
];

pub const SELECT_RETRIES: u32 = 1;
pub const REASONING_RETRIES: u32 = 2;
pub const REPAIR_ATTEMPTS: u32 = 2;
/// Share of an observation's content words the reasoning must contain when
/// it does not cite the id.
pub const CONTAINMENT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub sample_id: String,
    pub audio: String,
    pub question: String,
    pub choices: Vec<Choice>,
    pub content: ContentType,
    pub sources: Vec<SourceId>,
    pub observations: Vec<Observation>,
    pub items: Vec<EvidenceItem>,
    pub tool_results: Vec<ToolResult>,
    pub contradictions: Vec<Contradiction>,
    pub disagreements: Vec<Disagreement>,
    #[serde(default)]
    pub open_hypotheses: Vec<VerificationHypothesis>,
}

impl EvidenceBundle {
    pub fn labels(&self) -> Vec<&str> {
        self.choices.iter().map(|c| c.label.as_str()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty() && self.observations.is_empty()
    }
}

/// A bundle with every tentative prediction removed. Only [`redact`] makes
/// one.
#[derive(Debug, Clone, PartialEq)]
pub struct RedactedBundle(EvidenceBundle);

impl RedactedBundle {
    pub fn bundle(&self) -> &EvidenceBundle {
        &self.0
    }
}

pub fn redact(bundle: &EvidenceBundle) -> RedactedBundle {
    let mut b = bundle.clone();
    for o in &mut b.observations {
        o.tentative_prediction = None;
    }
    RedactedBundle(b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceWeight {
    pub label: String,
    #[serde(serialize_with = "serde_util::score")]
    pub weight: f64,
    pub item_ids: Vec<String>,
}

/// Items that count toward choice weights: everything except high-risk
/// claims and segmentation artifacts.
pub fn counts_toward_choice(item: &EvidenceItem) -> bool {
    !matches!(item.risk, RiskLevel::High | RiskLevel::SegmentationArtifact)
}

/// Summed evidence weight of the items supporting each choice.
pub fn choice_weights(bundle: &RedactedBundle, scoring: &ScoringConfig) -> Vec<ChoiceWeight> {
    let b = bundle.bundle();
    let mut out: Vec<ChoiceWeight> = b
        .choices
        .iter()
        .map(|c| ChoiceWeight { label: c.label.clone(), weight: 0.0, item_ids: Vec::new() })
        .collect();
    for item in b.items.iter().filter(|i| counts_toward_choice(i)) {
        for label in sample::supported_choices(&item.claim, &b.choices) {
            if let Some(w) = out.iter_mut().find(|w| w.label == label) {
                w.weight += evidence_weight(item, scoring);
                w.item_ids.push(item.id.clone());
            }
        }
    }
    out
}

/// First label with the largest weight.
pub fn argmax(weights: &[ChoiceWeight]) -> Option<&ChoiceWeight> {
    weights.iter().fold(None, |best: Option<&ChoiceWeight>, w| match best {
        Some(b) if b.weight >= w.weight => Some(b),
        _ => Some(w),
    })
}

/// Share of the total weight held by `label`; uniform when nothing weighs.
pub fn weight_share(weights: &[ChoiceWeight], label: &str) -> f64 {
    let total: f64 = weights.iter().map(|w| w.weight).sum();
    if total <= 0.0 {
        return 1.0 / weights.len().max(1) as f64;
    }
    weights.iter().find(|w| w.label == label).map_or(0.0, |w| w.weight / total)
}

fn item_line(i: &EvidenceItem) -> String {
    let range = i.time_range.map(|r| format!(", {r}")).unwrap_or_default();
    format!(
        "[{}] ({}, {} tier, confidence {:.2}, risk {:?}{range}) {}",
        i.id,
        i.origin.label(),
        i.tier,
        i.confidence,
        i.risk,
        i.claim
    )
}

fn conflict_line(c: &Contradiction) -> String {
    let kind = serde_json::to_value(c.kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
    let state = if c.resolved { "resolved" } else { "unresolved" };
    format!("[{}] conflict ({kind}, {state}, items {}) {}", c.id, c.item_ids.join(", "), c.description)
}

fn evidence_section(b: &EvidenceBundle) -> String {
    let mut out = format!(
        "Audio: {}\nQuestion: {}\n{}\nContent type: {}\n\nEvidence:\n",
        b.audio,
        b.question,
        prompts::choice_block(&b.choices),
        b.content
    );
    for i in &b.items {
        out.push_str(&item_line(i));
        out.push('\n');
    }
    if !b.contradictions.is_empty() {
        out.push_str("\nContradictions:\n");
        for c in &b.contradictions {
            out.push_str(&conflict_line(c));
            out.push('\n');
        }
    }
    if !b.open_hypotheses.is_empty() {
        out.push_str("\nUnsettled checks:\n");
        for h in &b.open_hypotheses {
            out.push_str(&format!("- {}\n", h.statement));
        }
    }
    out
}

pub fn select_prompt(bundle: &RedactedBundle, weights: &[ChoiceWeight]) -> String {
    let mut out = format!("Task: {}\n{}\n", prompts::TASK_SELECT, evidence_section(bundle.bundle()));
    for w in weights {
        out.push_str(&format!(
            "Choice {} aggregate weight: {:.4} (items: {})\n",
            w.label,
            w.weight,
            w.item_ids.join(", ")
        ));
    }
    out.push_str(
        "\nWeigh the evidence by tier, confidence and relevance. High-risk claims and segmentation \
         artifacts are already excluded from the aggregates. Reply with one line: ANSWER: <letter>\n",
    );
    out
}

/// Label from an `ANSWER:` line, if it names a valid choice.
pub fn parse_answer(text: &str, labels: &[&str]) -> Option<String> {
    text.lines().rev().find_map(|line| {
        let upper = line.trim().to_uppercase();
        let idx = upper.find("ANSWER:")?;
        let label = upper[idx + 7..]
            .trim()
            .trim_matches(|c: char| !c.is_ascii_alphanumeric())
            .split(|c: char| !c.is_ascii_alphanumeric())
            .next()?
            .to_string();
        labels.contains(&label.as_str()).then_some(label)
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSource {
    #[default]
    Backend,
    /// No parseable answer after the retry; heaviest choice taken.
    WeightFallback,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Decision {
    pub answer: String,
    #[serde(serialize_with = "serde_util::score")]
    pub confidence: f64,
    pub weights: Vec<ChoiceWeight>,
    pub source: DecisionSource,
    pub attempts: u32,
}

pub struct ArgueContext<'a> {
    pub scoring: &'a ScoringConfig,
    pub sampling: Sampling,
    pub endpoint: &'a str,
}

fn ask(backend: &dyn ChatBackend, ctx: &ArgueContext<'_>, sample_id: &str, system: &str, user: String) -> Option<String> {
    let request = ChatRequest::new(ctx.endpoint, sample_id, vec![Message::system(system), Message::user(user)])
        .with_sampling(ctx.sampling);
    match backend.complete(&request) {
        Ok(r) => Some(r.text),
        Err(e) => {
            tracing::warn!(sample = sample_id, error = %e, "argumentation call failed");
            None
        }
    }
}

pub fn select_answer(bundle: &RedactedBundle, backend: &dyn ChatBackend, ctx: &ArgueContext<'_>) -> Decision {
    let b = bundle.bundle();
    let weights = choice_weights(bundle, ctx.scoring);
    let labels = b.labels();
    let prompt = select_prompt(bundle, &weights);
    let mut attempts = 0;
    for _ in 0..=SELECT_RETRIES {
        attempts += 1;
        let reply = ask(backend, ctx, &b.sample_id, "You answer questions about audio from weighted evidence.", prompt.clone());
        if let Some(answer) = reply.and_then(|r| parse_answer(&r, &labels)) {
            let confidence = weight_share(&weights, &answer);
            return Decision { answer, confidence, weights, source: DecisionSource::Backend, attempts };
        }
    }
    let answer = argmax(&weights).map(|w| w.label.clone()).unwrap_or_else(|| "A".into());
    let confidence = weight_share(&weights, &answer);
    Decision { answer, confidence, weights, source: DecisionSource::WeightFallback, attempts }
}

pub fn reasoning_prompt(bundle: &RedactedBundle, decision: &Decision) -> String {
    let b = bundle.bundle();
    let mut out = format!(
        "Task: {}\nSelected: {}\n{}\nTool results:\n",
        prompts::TASK_REASON,
        decision.answer,
        evidence_section(b)
    );
    for r in b.tool_results.iter().filter(|r| !r.is_failed()) {
        out.push_str(&format!("[{}] ({}) {}\n", r.id, r.request.tool, r.output.summary));
    }
    out.push_str("\nWrite the reasoning for the selected answer under exactly these headings:\n");
    for s in REASONING_SECTIONS {
        out.push_str(&format!("## {s}\n"));
    }
    out.push_str(
        "Cite every evidence item by its [id], address every contradiction and name every tool whose \
         result you rely on.\n",
    );
    out
}

/// Headings from the fixed list that the text lacks.
pub fn missing_sections(text: &str) -> Vec<&'static str> {
    let present: BTreeSet<String> = text
        .lines()
        .filter_map(|l| l.trim().strip_prefix("## "))
        .map(|h| h.trim().to_lowercase())
        .collect();
    REASONING_SECTIONS
        .iter()
        .copied()
        .filter(|s| !present.contains(&s.to_lowercase()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CompletenessReport {
    pub missing_observations: Vec<String>,
    pub missing_conflicts: Vec<String>,
    pub missing_tools: Vec<String>,
    /// Regenerations requested for coverage.
    pub repairs: u32,
    /// Missing entries were appended by the engine after the repairs ran out.
    #[serde(default)]
    pub patched: bool,
}

impl CompletenessReport {
    pub fn is_complete(&self) -> bool {
        self.missing_observations.is_empty() && self.missing_conflicts.is_empty() && self.missing_tools.is_empty()
    }

    fn missing(&self) -> usize {
        self.missing_observations.len() + self.missing_conflicts.len() + self.missing_tools.len()
    }
}

fn covered(text: &str, tokens: &BTreeSet<String>, id: &str, words: &str) -> bool {
    text.contains(id) || text::containment(&text::content_tokens(words), tokens) >= CONTAINMENT
}

/// Every observation and contradiction must be cited by id or paraphrased;
/// every successful tool must be named.
pub fn check_completeness(text: &str, bundle: &RedactedBundle) -> CompletenessReport {
    let b = bundle.bundle();
    let tokens = text::content_tokens(text);
    let mut tools_seen = BTreeSet::new();
    CompletenessReport {
        missing_observations: b
            .observations
            .iter()
            .filter(|o| !covered(text, &tokens, &o.id, &o.claim))
            .map(|o| o.id.clone())
            .collect(),
        missing_conflicts: b
            .contradictions
            .iter()
            .filter(|c| !covered(text, &tokens, &c.id, &c.description))
            .map(|c| c.id.clone())
            .collect(),
        missing_tools: b
            .tool_results
            .iter()
            .filter(|r| !r.is_failed() && tools_seen.insert(r.request.tool.clone()))
            .filter(|r| !text::mentions(&tokens, &r.request.tool) && !text.contains(&r.request.tool))
            .map(|r| r.request.tool.clone())
            .collect(),
        repairs: 0,
        patched: false,
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Reasoning {
    pub text: String,
    pub attempts: u32,
    /// Headings that had to be stubbed.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stubbed: Vec<String>,
    pub flagged: bool,
}

fn stub_sections(text: &str, missing: &[&str]) -> String {
    let mut out = text.trim_end().to_string();
    for s in missing {
        out.push_str(&format!("\n\n## {s}\nNot provided by the reasoning model."));
    }
    out.push('\n');
    out
}

fn empty_template(decision: &Decision) -> String {
    let mut out = String::new();
    for s in REASONING_SECTIONS {
        let body = if s == "Conclusion" {
            format!("No evidence was gathered; {} is a default choice.", decision.answer)
        } else {
            "No evidence was gathered.".into()
        };
        out.push_str(&format!("## {s}\n{body}\n\n"));
    }
    out
}

const REASON_SYSTEM: &str = "You explain audio question answers from evidence, citing every item.";

/// Writes the seven-section reasoning: up to two retries for missing
/// headings, then stubs.
pub fn write_reasoning(
    bundle: &RedactedBundle,
    decision: &Decision,
    backend: &dyn ChatBackend,
    ctx: &ArgueContext<'_>,
) -> Reasoning {
    let b = bundle.bundle();
    if b.is_empty() {
        return Reasoning { text: empty_template(decision), attempts: 0, stubbed: Vec::new(), flagged: true };
    }
    let prompt = reasoning_prompt(bundle, decision);
    let mut best: Option<String> = None;
    let mut attempts = 0;
    for _ in 0..=REASONING_RETRIES {
        attempts += 1;
        let Some(text) = ask(backend, ctx, &b.sample_id, REASON_SYSTEM, prompt.clone()) else { continue };
        let fewer = best.as_ref().is_none_or(|t| missing_sections(&text).len() < missing_sections(t).len());
        if fewer {
            best = Some(text);
        }
        if best.as_ref().is_some_and(|t| missing_sections(t).is_empty()) {
            break;
        }
    }
    let text = best.unwrap_or_default();
    let missing = missing_sections(&text);
    if missing.is_empty() {
        return Reasoning { text, attempts, stubbed: Vec::new(), flagged: false };
    }
    Reasoning {
        text: stub_sections(&text, &missing),
        attempts,
        stubbed: missing.iter().map(|s| s.to_string()).collect(),
        flagged: true,
    }
}

fn append_to_section(text: &str, section: &str, lines: &[String]) -> String {
    let heading = format!("## {section}");
    let mut out = Vec::new();
    let mut inside = false;
    let mut done = false;
    for line in text.lines() {
        if inside && line.trim_start().starts_with("## ") {
            out.extend(lines.iter().cloned());
            inside = false;
            done = true;
        }
        if line.trim().eq_ignore_ascii_case(&heading) {
            inside = true;
        }
        out.push(line.to_string());
    }
    if !done {
        out.extend(lines.iter().cloned());
    }
    out.join("\n") + "\n"
}

/// Regenerates the whole document up to twice when coverage is missing;
/// what is still missing afterwards is appended by the engine.
pub fn ensure_complete(
    reasoning: Reasoning,
    bundle: &RedactedBundle,
    decision: &Decision,
    backend: &dyn ChatBackend,
    ctx: &ArgueContext<'_>,
) -> (Reasoning, CompletenessReport) {
    let mut reasoning = reasoning;
    let mut report = check_completeness(&reasoning.text, bundle);
    let mut repairs = 0;
    while !report.is_complete() && repairs < REPAIR_ATTEMPTS && !bundle.bundle().is_empty() {
        repairs += 1;
        let mut prompt = reasoning_prompt(bundle, decision);
        prompt.push_str("\nYour previous reasoning left out the following; rewrite the whole document covering them:\n");
        for id in report.missing_observations.iter().chain(&report.missing_conflicts) {
            prompt.push_str(&format!("- [{id}]\n"));
        }
        for t in &report.missing_tools {
            prompt.push_str(&format!("- tool {t}\n"));
        }
        let Some(text) = ask(backend, ctx, &bundle.bundle().sample_id, REASON_SYSTEM, prompt) else { continue };
        let candidate = check_completeness(&text, bundle);
        if missing_sections(&text).is_empty() && candidate.missing() < report.missing() {
            reasoning.text = text;
            report = candidate;
        }
    }
    report.repairs = repairs;
    if !report.is_complete() {
        let b = bundle.bundle();
        let mut lines = Vec::new();
        for id in &report.missing_observations {
            if let Some(o) = b.observations.iter().find(|o| &o.id == id) {
                lines.push(format!("- [{}] {} (not discussed above)", o.id, o.claim));
            }
        }
        for id in &report.missing_conflicts {
            if let Some(c) = b.contradictions.iter().find(|c| &c.id == id) {
                lines.push(format!("- [{}] {} (not discussed above)", c.id, c.description));
            }
        }
        for t in &report.missing_tools {
            lines.push(format!("- {t} was run but not discussed above"));
        }
        reasoning.text = append_to_section(&reasoning.text, "Evidence synthesis", &lines);
        reasoning.flagged = true;
        let after = check_completeness(&reasoning.text, bundle);
        report = CompletenessReport { repairs, patched: true, ..after };
    }
    (reasoning, report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Argument {
    pub decision: Decision,
    pub reasoning: Reasoning,
    pub completeness: CompletenessReport,
}

pub fn argue(bundle: &EvidenceBundle, backend: &dyn ChatBackend, ctx: &ArgueContext<'_>) -> Argument {
    let redacted = redact(bundle);
    let decision = select_answer(&redacted, backend, ctx);
    let reasoning = write_reasoning(&redacted, &decision, backend, ctx);
    let (reasoning, completeness) = ensure_complete(reasoning, &redacted, &decision, backend, ctx);
    Argument { decision, reasoning, completeness }
}
