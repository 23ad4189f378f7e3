//! Argumentation-level replay ablations. Every upstream artifact is fixed;
//! only the evidence shown to answer selection changes.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::records::PipelineRecord;
use super::stats::{holm_bonferroni, mcnemar, McNemarMethod};
use crate::argumentation::{redact, select_answer, ArgueContext, EvidenceBundle};
use crate::backends::{ChatBackend, Sampling};
use crate::evidence::{ScoringConfig, SourceId};
use crate::exec::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceFilter {
    Both,
    SourceAOnly,
    SourceBOnly,
}

impl EvidenceFilter {
    pub fn label(self) -> &'static str {
        match self {
            EvidenceFilter::Both => "baseline replay",
            EvidenceFilter::SourceAOnly => "source A only",
            EvidenceFilter::SourceBOnly => "source B only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_lowercase().replace(['-', '_', ' '], "").as_str() {
            "both" => Some(Self::Both),
            "sourceaonly" | "aonly" | "a" => Some(Self::SourceAOnly),
            "sourcebonly" | "bonly" | "b" => Some(Self::SourceBOnly),
            _ => None,
        }
    }

    fn removed(self, sources: &[SourceId]) -> Option<&SourceId> {
        match self {
            EvidenceFilter::Both => None,
            EvidenceFilter::SourceAOnly => sources.get(1),
            EvidenceFilter::SourceBOnly => sources.first(),
        }
    }
}

/// Drops the other source's observations and LALM items, and every
/// contradiction, disagreement and open hypothesis that references a dropped
/// item. Tool evidence stays.
pub fn filter_bundle(bundle: &EvidenceBundle, filter: EvidenceFilter) -> EvidenceBundle {
    let Some(gone) = filter.removed(&bundle.sources).cloned() else { return bundle.clone() };
    let mut b = bundle.clone();
    let dropped: BTreeSet<String> = b
        .items
        .iter()
        .filter(|i| i.origin.source() == Some(&gone))
        .map(|i| i.id.clone())
        .chain(b.observations.iter().filter(|o| o.source == gone).map(|o| o.id.clone()))
        .collect();
    b.observations.retain(|o| o.source != gone);
    b.items.retain(|i| !dropped.contains(&i.id));
    let touches = |ids: &[String]| ids.iter().any(|id| dropped.contains(id));
    b.contradictions.retain(|c| !touches(&c.item_ids));
    b.disagreements.retain(|d| !touches(&d.item_ids));
    let kept: BTreeSet<&str> = b.contradictions.iter().map(|c| c.id.as_str()).collect();
    b.open_hypotheses.retain(|h| kept.contains(h.contradiction_id.as_str()));
    b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub label: String,
    pub filter: EvidenceFilter,
    pub n: usize,
    pub accuracy: f64,
    pub delta_pp: f64,
    /// Baseline correct, variant wrong.
    pub b: u64,
    /// Baseline wrong, variant correct.
    pub c: u64,
    pub n_d: u64,
    pub p_value: f64,
    #[serde(default)]
    pub adjusted_threshold: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub n: usize,
    pub skipped: usize,
    pub baseline_accuracy: f64,
    pub alpha: f64,
    pub method: McNemarMethod,
    pub results: Vec<AblationResult>,
}

pub struct ReplayContext<'a> {
    pub scoring: &'a ScoringConfig,
    pub sampling: Sampling,
    /// Used when a record does not name its reasoner endpoint.
    pub endpoint: &'a str,
    pub execution: Execution,
}

/// Replayable records: gold answer known and choices present.
pub fn replayable(records: &[PipelineRecord]) -> (Vec<&PipelineRecord>, usize) {
    let ok: Vec<&PipelineRecord> = records
        .iter()
        .filter(|r| r.answer.is_some() && !r.bundle.choices.is_empty())
        .collect();
    let skipped = records.len() - ok.len();
    (ok, skipped)
}

/// Re-runs redaction and answer selection on filtered bundles. Returns the
/// chosen label per record.
pub fn replay_answers(
    records: &[&PipelineRecord],
    filter: EvidenceFilter,
    backend: &dyn ChatBackend,
    ctx: &ReplayContext<'_>,
) -> Vec<String> {
    exec::map(records, ctx.execution, |r| {
        let endpoint = if r.reasoner_endpoint.is_empty() { ctx.endpoint } else { r.reasoner_endpoint.as_str() };
        let actx = ArgueContext { scoring: ctx.scoring, sampling: ctx.sampling, endpoint };
        let bundle = filter_bundle(&r.bundle, filter);
        select_answer(&redact(&bundle), backend, &actx).answer
    })
}

fn correctness(records: &[&PipelineRecord], answers: &[String]) -> Vec<bool> {
    records.iter().zip(answers).map(|(r, a)| r.answer.as_deref() == Some(a.as_str())).collect()
}

/// Discordant pairs `(b, c)` of a variant against the baseline.
pub fn discordant(baseline: &[bool], variant: &[bool]) -> (u64, u64) {
    baseline.iter().zip(variant).fold((0, 0), |(b, c), (x, y)| match (x, y) {
        (true, false) => (b + 1, c),
        (false, true) => (b, c + 1),
        _ => (b, c),
    })
}

fn accuracy(v: &[bool]) -> f64 {
    if v.is_empty() { 0.0 } else { v.iter().filter(|x| **x).count() as f64 / v.len() as f64 }
}

/// Replays the baseline and each variant, then applies Holm–Bonferroni
/// across the variants.
pub fn ablate(
    records: &[PipelineRecord],
    filters: &[EvidenceFilter],
    backend: &dyn ChatBackend,
    ctx: &ReplayContext<'_>,
    alpha: f64,
    method: McNemarMethod,
) -> AblationReport {
    let (ok, skipped) = replayable(records);
    let base = correctness(&ok, &replay_answers(&ok, EvidenceFilter::Both, backend, ctx));
    let n = ok.len();
    let mut results: Vec<AblationResult> = filters
        .iter()
        .map(|&filter| {
            let variant = correctness(&ok, &replay_answers(&ok, filter, backend, ctx));
            let (b, c) = discordant(&base, &variant);
            AblationResult {
                label: filter.label().into(),
                filter,
                n,
                accuracy: accuracy(&variant),
                delta_pp: if n == 0 { 0.0 } else { (c as f64 - b as f64) / n as f64 * 100.0 },
                b,
                c,
                n_d: b + c,
                p_value: mcnemar(b, c, method),
                adjusted_threshold: alpha,
                significant: false,
            }
        })
        .collect();
    let p: Vec<f64> = results.iter().map(|r| r.p_value).collect();
    for step in holm_bonferroni(&p, alpha) {
        results[step.index].adjusted_threshold = step.adjusted_threshold;
        results[step.index].significant = step.rejected;
    }
    AblationReport { n, skipped, baseline_accuracy: accuracy(&base), alpha, method, results }
}

impl AblationReport {
    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "Baseline replay accuracy: {:.1}% (N = {}, skipped {})\n\n\
             | Configuration | Accuracy | Δ (pp) | N_d (b/c) | p | Holm threshold | Significant |\n\
             |---|---|---|---|---|---|---|\n",
            self.baseline_accuracy * 100.0,
            self.n,
            self.skipped
        );
        for r in &self.results {
            let _ = writeln!(
                out,
                "| {} | {:.1}% | {:+.1} | {} ({}/{}) | {:.3e} | {:.4} | {} |",
                r.label,
                r.accuracy * 100.0,
                r.delta_pp,
                r.n_d,
                r.b,
                r.c,
                r.p_value,
                r.adjusted_threshold,
                if r.significant { "yes" } else { "no" }
            );
        }
        out
    }
}
