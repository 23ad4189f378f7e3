//! One sample end to end: intake, unified analysis, the verification loop
//! and argumentation, with every backend call logged into the record.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::records::{PipelineRecord, Timings, SCHEMA_VERSION};
use crate::argumentation::{self, argue, ArgueContext, CompletenessReport, EvidenceBundle, REASONING_SECTIONS};
use crate::backends::{CallLog, ChatBackend, LoggedChat, LoggedTools, Sampling, ToolBackend};
use crate::clock::{Clock, LogicalClock, SystemClock};
use crate::evidence::{ContentType, EvidenceOrigin, ReliabilityTier, ScoringConfig, SourceId};
use crate::exec::Execution;
use crate::intake::{self, IntakeContext, IntakeError, SourceReport};
use crate::sample::Sample;
use crate::tools::{Step, ValidatedCatalog};
use crate::unified::{self, UnifiedContext};
use crate::verification::{run_verification, LoopLimits, VerifyContext};

pub const DEFAULT_REASONER: &str = "reasoner";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid sample {id}: {source}")]
    Input {
        id: String,
        #[source]
        source: IntakeError,
    },
    #[error("invariant breach in sample {id}: {}", .breaches.join("; "))]
    Invariant { id: String, breaches: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub scoring: ScoringConfig,
    pub limits: LoopLimits,
    pub sampling: Sampling,
    pub dedup_threshold: f64,
    pub execution: Execution,
    /// Use a logical clock so that timings and latencies are reproducible.
    pub logical_clock: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            scoring: ScoringConfig::default(),
            limits: LoopLimits::default(),
            sampling: Sampling::default(),
            dedup_threshold: 0.6,
            execution: Execution::default(),
            logical_clock: false,
        }
    }
}

pub struct Engine {
    pub sources: Vec<(SourceId, Arc<dyn ChatBackend>)>,
    pub reasoner: Arc<dyn ChatBackend>,
    pub reasoner_endpoint: String,
    pub tools: Arc<dyn ToolBackend>,
    pub catalog: ValidatedCatalog,
    pub settings: Settings,
}

/// The answer as shown to a user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalOutput {
    pub sample_id: String,
    pub chosen: String,
    pub choice_text: String,
    #[serde(serialize_with = "crate::serde_util::score")]
    pub confidence: f64,
    pub sections: Vec<Section>,
    pub completeness: CompletenessReport,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub heading: String,
    pub body: String,
}

/// Splits a reasoning document on its `## ` headings, in canonical order.
pub fn split_sections(text: &str) -> Vec<Section> {
    let mut found: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        if let Some(h) = line.trim().strip_prefix("## ") {
            found.push((h.trim().to_string(), String::new()));
        } else if let Some((_, body)) = found.last_mut() {
            body.push_str(line);
            body.push('\n');
        }
    }
    REASONING_SECTIONS
        .iter()
        .map(|&heading| Section {
            heading: heading.into(),
            body: found
                .iter()
                .find(|(h, _)| h.eq_ignore_ascii_case(heading))
                .map(|(_, b)| b.trim().to_string())
                .unwrap_or_default(),
        })
        .collect()
}

impl FinalOutput {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{}: {} ({}) confidence {:.2}{}\n",
            self.sample_id,
            self.chosen,
            self.choice_text,
            self.confidence,
            if self.flagged { " [flagged]" } else { "" }
        );
        for s in &self.sections {
            out.push_str(&format!("\n## {}\n{}\n", s.heading, s.body));
        }
        if !self.completeness.is_complete() {
            out.push_str("\nUnaddressed evidence remained after repair.\n");
        }
        out
    }
}

pub struct SampleRun {
    pub output: FinalOutput,
    pub record: PipelineRecord,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub content_override: Option<ContentType>,
}

/// Two reports, one per configured source; a source that produced nothing
/// is represented by an empty report.
fn pair(reports: Vec<SourceReport>, sources: &[SourceId]) -> [SourceReport; 2] {
    let mut it = sources.iter().map(|s| {
        reports
            .iter()
            .find(|r| &r.source == s)
            .cloned()
            .unwrap_or_else(|| SourceReport { source: s.clone(), ..Default::default() })
    });
    let a = it.next().unwrap_or_default();
    let b = it.next().unwrap_or_default();
    [a, b]
}

/// JSON round trip, so the argued bundle is exactly what a replay from the
/// record will see (scores are written with four decimals).
fn settle(bundle: EvidenceBundle) -> EvidenceBundle {
    serde_json::to_string(&bundle)
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok())
        .unwrap_or(bundle)
}

impl Engine {
    fn clock(&self) -> Box<dyn Clock> {
        if self.settings.logical_clock {
            Box::new(LogicalClock::default())
        } else {
            Box::new(SystemClock::new())
        }
    }

    pub fn run_sample(&self, sample: &Sample, opts: RunOptions) -> Result<SampleRun, PipelineError> {
        let s = &self.settings;
        let log = CallLog::default();
        let stage_clock = self.clock();
        // one clock per concurrent caller keeps logical latencies stable
        let source_clocks: Vec<Box<dyn Clock>> = self.sources.iter().map(|_| self.clock()).collect();
        let reasoner_clock = self.clock();
        let logged_sources: Vec<LoggedChat<'_>> = self
            .sources
            .iter()
            .zip(&source_clocks)
            .map(|((_, b), c)| LoggedChat::new(b.as_ref(), &log, c.as_ref()))
            .collect();
        let sources: Vec<(SourceId, &dyn ChatBackend)> = self
            .sources
            .iter()
            .zip(&logged_sources)
            .map(|((id, _), b)| (id.clone(), b as &dyn ChatBackend))
            .collect();
        let reasoner = LoggedChat::new(self.reasoner.as_ref(), &log, reasoner_clock.as_ref());
        let tools = LoggedTools::new(self.tools.as_ref(), &log);
        let input = |source| PipelineError::Input { id: sample.id.clone(), source };

        let t0 = stage_clock.now_ms();
        let intake_ctx = IntakeContext {
            sample,
            sampling: s.sampling,
            dedup_threshold: s.dedup_threshold,
            execution: s.execution,
        };
        let (reports, mut warnings) = intake::run_intake(&sources, &intake_ctx).map_err(input)?;
        let ids: Vec<SourceId> = self.sources.iter().map(|(id, _)| id.clone()).collect();
        let [a, b] = pair(reports, &ids);
        for r in [&a, &b] {
            if r.observations.is_empty() {
                warnings.push(format!("{}: no usable observations", r.source));
            }
        }
        let voted = intake::classify_content(&[a.clone(), b.clone()], None);
        let content = opts.content_override.unwrap_or(voted);
        let t1 = stage_clock.now_ms();

        let uctx = UnifiedContext {
            sample,
            scoring: &s.scoring,
            sampling: s.sampling,
            dedup_threshold: s.dedup_threshold,
            endpoint: &self.reasoner_endpoint,
        };
        let analysis = unified::corroborate_sources(&a, &b, &reasoner, &uctx);
        if analysis.fallback {
            warnings.push("corroboration reply unusable; lexical fallback used".into());
        }
        let t2 = stage_clock.now_ms();

        let vctx = VerifyContext {
            sample,
            catalog: &self.catalog,
            scoring: &s.scoring,
            content,
            limits: s.limits,
            sampling: s.sampling,
            endpoint: &self.reasoner_endpoint,
            clock: stage_clock.as_ref(),
            execution: s.execution,
        };
        let outcome = run_verification(analysis.clone(), &reasoner, &tools, &vctx);
        warnings.extend(outcome.warnings.iter().cloned());
        let t3 = stage_clock.now_ms();

        let open: Vec<_> = outcome
            .hypotheses
            .hypotheses
            .iter()
            .filter(|h| outcome.contradictions.iter().any(|c| c.id == h.contradiction_id && !c.resolved))
            .cloned()
            .collect();
        let bundle = settle(EvidenceBundle {
            sample_id: sample.id.clone(),
            audio: sample.audio.clone(),
            question: sample.question.clone(),
            choices: sample.choices.clone(),
            content,
            sources: ids.clone(),
            observations: a.observations.iter().chain(&b.observations).cloned().collect(),
            items: outcome.items.clone(),
            tool_results: outcome.tool_results.clone(),
            contradictions: outcome.contradictions.clone(),
            disagreements: outcome.disagreements.clone(),
            open_hypotheses: open,
        });
        let actx = ArgueContext { scoring: &s.scoring, sampling: s.sampling, endpoint: &self.reasoner_endpoint };
        let argument = argue(&bundle, &reasoner, &actx);
        let t4 = stage_clock.now_ms();

        let record = PipelineRecord {
            schema_version: SCHEMA_VERSION,
            sample_id: sample.id.clone(),
            audio: sample.audio.clone(),
            duration_s: sample.duration_s,
            question: sample.question.clone(),
            choices: sample.choices.clone(),
            answer: sample.answer.clone(),
            category: sample.category.clone(),
            content,
            content_overridden: opts.content_override.is_some_and(|c| c != voted),
            reasoner_endpoint: self.reasoner_endpoint.clone(),
            agreement: analysis.agreement,
            source_reports: vec![a, b],
            unified: analysis,
            rounds: outcome.rounds.clone(),
            step1_stop: Some(outcome.step1_stop),
            step2_stop: Some(outcome.step2_stop),
            risk: outcome.risk.clone(),
            hypotheses: outcome.hypotheses.clone(),
            bundle,
            decision: argument.decision,
            reasoning: argument.reasoning,
            completeness: argument.completeness,
            timings: Timings {
                intake_ms: t1 - t0,
                unified_ms: t2 - t1,
                verification_ms: t3 - t2,
                argumentation_ms: t4 - t3,
                total_ms: t4 - t0,
            },
            warnings,
            exchanges: log.chats(),
            tool_exchanges: log.tools(),
        };
        let breaches = check_invariants(&record, &s.scoring, &s.limits);
        if !breaches.is_empty() {
            return Err(PipelineError::Invariant { id: sample.id.clone(), breaches });
        }
        let output = final_output(&record);
        Ok(SampleRun { output, record })
    }
}

pub fn final_output(record: &PipelineRecord) -> FinalOutput {
    FinalOutput {
        sample_id: record.sample_id.clone(),
        chosen: record.decision.answer.clone(),
        choice_text: record
            .choices
            .iter()
            .find(|c| c.label == record.decision.answer)
            .map(|c| c.text.clone())
            .unwrap_or_default(),
        confidence: record.decision.confidence,
        sections: split_sections(&record.reasoning.text),
        completeness: record.completeness.clone(),
        flagged: record.reasoning.flagged,
    }
}

/// Properties every finished record must satisfy. A breach means a bug, not
/// a degraded backend.
pub fn check_invariants(record: &PipelineRecord, scoring: &ScoringConfig, limits: &LoopLimits) -> Vec<String> {
    let mut out = Vec::new();
    if !record.choices.iter().any(|c| c.label == record.decision.answer) {
        out.push(format!("answer {:?} is not a choice", record.decision.answer));
    }
    if !(0.0..=1.0).contains(&record.decision.confidence) {
        out.push(format!("decision confidence {} outside [0, 1]", record.decision.confidence));
    }
    let eps = 1e-9;
    for i in &record.bundle.items {
        let cap = scoring.tiers.get(&i.tier).map_or(1.0, |t| t.cap);
        if i.confidence > cap + eps {
            out.push(format!("{} confidence {} over the {} cap {cap}", i.id, i.confidence, i.tier));
        }
        let lalm = i.tier == ReliabilityTier::Lalm || matches!(i.origin, EvidenceOrigin::LalmObservation(_));
        if lalm && i.confidence > scoring.lalm_hard_cap + eps {
            out.push(format!("{} LALM confidence {} over the hard cap", i.id, i.confidence));
        }
    }
    let step1 = record.rounds.iter().filter(|r| r.step == Step::Step1).count();
    let step2 = record.rounds.iter().filter(|r| r.step == Step::Step2).count();
    if step1 > limits.step1_rounds as usize || step2 > limits.step2_rounds as usize {
        out.push(format!("{step1} Step-1 and {step2} Step-2 rounds exceed the limits"));
    }
    if argumentation::missing_sections(&record.reasoning.text).len() > 0 {
        out.push("reasoning document lacks sections".into());
    }
    out
}
