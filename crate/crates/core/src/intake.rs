//! Source-model intake: four queries per source (full audio plus three equal
//! segments), response parsing, per-source synthesis and content voting.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{ChatBackend, ChatRequest, Message, Sampling};
use crate::evidence::{ContentType, Observation, ObservationScope, SourceId, TimeRange};
use crate::exec::{self, Execution};
use crate::prompts;
use crate::sample::Sample;
use crate::text;

pub const SEGMENTS: usize = 3;
pub const QUERIES_PER_SOURCE: usize = SEGMENTS + 1;

#[derive(Debug, Error)]
pub enum IntakeError {
    #[error("duration must be positive, got {0}")]
    Duration(f64),
    #[error("no sources configured")]
    NoSources,
    #[error("partial intake for {}: {got} of {QUERIES_PER_SOURCE} responses", .report.source)]
    Partial { got: usize, report: Box<SourceReport> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntakeQuery {
    pub source: SourceId,
    pub scope: ObservationScope,
    pub prompt: String,
}

/// Segment bounds `[i·D/3, (i+1)·D/3)`, the last ending exactly at `D`.
pub fn segment_bounds(duration_s: f64) -> [(f64, f64); SEGMENTS] {
    let step = duration_s / SEGMENTS as f64;
    std::array::from_fn(|i| {
        let start = step * i as f64;
        let end = if i + 1 == SEGMENTS { duration_s } else { step * (i + 1) as f64 };
        (start, end)
    })
}

pub fn query_scopes(duration_s: f64) -> Vec<ObservationScope> {
    let mut scopes = vec![ObservationScope::FullAudio];
    scopes.extend(
        segment_bounds(duration_s)
            .iter()
            .enumerate()
            .map(|(i, &(start, end))| ObservationScope::Segment { index: i as u8, start, end }),
    );
    scopes
}

fn scope_line(scope: &ObservationScope) -> String {
    match scope {
        ObservationScope::FullAudio => "full".into(),
        ObservationScope::Segment { index, start, end } => {
            format!("segment {} of {SEGMENTS} ({start:.2}-{end:.2}s)", index + 1)
        }
    }
}

/// Parses a `Scope:` header back into a scope.
pub fn parse_scope_line(line: &str) -> Option<ObservationScope> {
    if line == "full" {
        return Some(ObservationScope::FullAudio);
    }
    let rest = line.strip_prefix("segment ")?;
    let (index, rest) = rest.split_once(" of ")?;
    let index: u8 = index.trim().parse().ok()?;
    let range = rest.split_once('(')?.1.trim_end_matches(')').trim_end_matches('s');
    let (start, end) = range.split_once('-')?;
    Some(ObservationScope::Segment {
        index: index.checked_sub(1)?,
        start: start.parse().ok()?,
        end: end.parse().ok()?,
    })
}

const OBSERVE_SYSTEM: &str = "You are an audio analyst. Report what you hear as concrete, \
checkable observations. Do not choose an answer.";

pub fn observe_prompt(sample: &Sample, scope: &ObservationScope) -> String {
    format!(
        "Task: {task}\nAudio: {audio}\nScope: {scope}\nQuestion: {q}\n{choices}\n\
         Describe what is audible in this scope. Report observations only; do not select an answer.\n\
         One observation per line:\n\
         OBS: <claim> | tags: <tag>, <tag> | time: <start>-<end>\n\
         Then one line naming the content type:\n\
         CONTENT: speech | music | mixed | environmental\n\
         Finally, on its own line, a tentative guess. It is logged and never used as evidence:\n\
         PREDICTION: <letter>\n",
        task = prompts::TASK_OBSERVE,
        audio = sample.audio,
        scope = scope_line(scope),
        q = sample.question,
        choices = prompts::choice_block(&sample.choices),
    )
}

/// Eight queries for two sources: four per source, identical prompts
/// parameterized by scope.
pub fn plan_queries(sample: &Sample, sources: &[SourceId]) -> Result<Vec<IntakeQuery>, IntakeError> {
    if !(sample.duration_s > 0.0 && sample.duration_s.is_finite()) {
        return Err(IntakeError::Duration(sample.duration_s));
    }
    if sources.is_empty() {
        return Err(IntakeError::NoSources);
    }
    let scopes = query_scopes(sample.duration_s);
    Ok(sources
        .iter()
        .flat_map(|src| {
            scopes.iter().map(move |scope| IntakeQuery {
                source: src.clone(),
                scope: *scope,
                prompt: observe_prompt(sample, scope),
            })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParsedObservation {
    pub claim: String,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_range: Option<TimeRange>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub observations: Vec<ParsedObservation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_vote: Option<ContentType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<String>,
}

fn parse_obs_fields(body: &str) -> Option<ParsedObservation> {
    let mut parts = body.split('|');
    let claim = parts.next()?.trim().trim_start_matches(['-', '*', '•']).trim();
    if claim.is_empty() {
        return None;
    }
    let mut obs = ParsedObservation { claim: claim.to_string(), ..Default::default() };
    for part in parts {
        let Some((key, value)) = part.split_once(':') else { continue };
        match key.trim().to_lowercase().as_str() {
            "tags" | "tag" => {
                obs.tags = value
                    .split(',')
                    .map(|t| t.trim().to_lowercase())
                    .filter(|t| !t.is_empty())
                    .collect();
            }
            "time" => {
                let v = value.trim().trim_end_matches('s');
                if let Some((s, e)) = v.split_once('-') {
                    if let (Ok(s), Ok(e)) = (s.trim().parse(), e.trim().parse()) {
                        obs.time_range = TimeRange::new(s, e);
                    }
                }
            }
            _ => {}
        }
    }
    Some(obs)
}

/// Parses a structured observation reply. Without any `OBS:` line every
/// remaining non-empty line is taken as one observation.
pub fn parse_response(text: &str, labels: &[&str]) -> ParsedResponse {
    let mut parsed = ParsedResponse::default();
    let mut loose = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let upper = line.to_uppercase();
        if let Some(rest) = strip_key(line, &upper, "OBS:") {
            parsed.observations.extend(parse_obs_fields(rest));
        } else if let Some(rest) = strip_key(line, &upper, "CONTENT:") {
            parsed.content_vote = ContentType::parse(rest.trim());
        } else if let Some(rest) = strip_key(line, &upper, "PREDICTION:") {
            let label = rest.trim().trim_matches(|c: char| !c.is_alphanumeric()).to_uppercase();
            parsed.prediction = labels.contains(&label.as_str()).then_some(label);
        } else if !line.starts_with("```") && line.chars().filter(|c| c.is_alphabetic()).count() >= 2 {
            loose.push(line);
        }
    }
    if parsed.observations.is_empty() {
        parsed.observations = loose.into_iter().filter_map(parse_obs_fields).collect();
    }
    parsed
}

fn strip_key<'a>(line: &'a str, upper: &str, key: &str) -> Option<&'a str> {
    upper.starts_with(key).then(|| &line[key.len()..])
}

/// Reply to one intake query; `None` when the query failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub scope: ObservationScope,
    pub parsed: Option<ParsedResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPrediction {
    pub scope: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SourceReport {
    pub source: SourceId,
    pub observations: Vec<Observation>,
    pub segment_corroborated_ids: BTreeSet<String>,
    pub content_vote: ContentType,
    /// Per-query tentative predictions; analytics only.
    #[serde(default)]
    pub predictions: Vec<QueryPrediction>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_queries: Vec<String>,
}

/// Merges near-duplicate observations (Jaccard ≥ `threshold`, no explicit
/// conflict). Returns the kept observations and the ids of those that were
/// seen both in a segment and in the full-audio reply.
pub fn dedup_observations(observations: &[Observation], threshold: f64) -> (Vec<Observation>, BTreeSet<String>) {
    struct Group {
        obs: Observation,
        tokens: BTreeSet<String>,
        full: bool,
        segment: bool,
    }
    let mut groups: Vec<Group> = Vec::new();
    for o in observations {
        let tokens = text::content_tokens(&o.claim);
        let full = !o.scope.is_segment();
        let hit = groups.iter_mut().find(|g| {
            text::jaccard(&g.tokens, &tokens) >= threshold && text::conflict(&g.obs.claim, &o.claim).is_none()
        });
        match hit {
            Some(g) => {
                g.full |= full;
                g.segment |= !full;
                g.obs.tags.extend(o.tags.iter().cloned());
                if g.obs.tentative_prediction.is_none() {
                    g.obs.tentative_prediction = o.tentative_prediction.clone();
                }
                if full && g.obs.scope.is_segment() {
                    // the full-audio wording wins, the segment range is kept
                    g.obs.time_range = g.obs.time_range.or(g.obs.scope.time_range());
                    g.obs.scope = ObservationScope::FullAudio;
                    g.obs.claim = o.claim.clone();
                    g.tokens = tokens;
                }
            }
            None => groups.push(Group { obs: o.clone(), tokens, full, segment: !full }),
        }
    }
    let corroborated = groups
        .iter()
        .filter(|g| g.full && g.segment)
        .map(|g| g.obs.id.clone())
        .collect();
    (groups.into_iter().map(|g| g.obs).collect(), corroborated)
}

fn vote<T: Ord + Copy>(votes: impl IntoIterator<Item = T>) -> Option<T> {
    let mut counts: BTreeMap<T, usize> = BTreeMap::new();
    for v in votes {
        *counts.entry(v).or_default() += 1;
    }
    let best = counts.values().copied().max()?;
    let mut winners = counts.into_iter().filter(|(_, n)| *n == best);
    let (first, _) = winners.next()?;
    winners.next().is_none().then_some(first)
}

/// Builds the per-source report from its query replies.
pub fn synthesize_source(
    responses: &[QueryResponse],
    source: &SourceId,
    dedup_threshold: f64,
) -> Result<SourceReport, IntakeError> {
    let mut raw = Vec::new();
    let mut predictions = Vec::new();
    let mut votes = Vec::new();
    let mut failed = Vec::new();
    let mut answered = 0;
    for r in responses {
        let Some(parsed) = &r.parsed else {
            failed.push(r.scope.label());
            continue;
        };
        answered += 1;
        votes.extend(parsed.content_vote);
        if let Some(p) = &parsed.prediction {
            predictions.push(QueryPrediction { scope: r.scope.label(), label: p.clone() });
        }
        for (i, o) in parsed.observations.iter().enumerate() {
            raw.push(Observation {
                id: format!("{source}:{}:{}", r.scope.label(), i + 1),
                source: source.clone(),
                scope: r.scope,
                claim: o.claim.clone(),
                tags: o.tags.clone(),
                time_range: o.time_range,
                tentative_prediction: parsed.prediction.clone(),
            });
        }
    }
    let (observations, segment_corroborated_ids) = dedup_observations(&raw, dedup_threshold);
    let report = SourceReport {
        source: source.clone(),
        observations,
        segment_corroborated_ids,
        content_vote: vote(votes).unwrap_or(ContentType::Mixed),
        predictions,
        failed_queries: failed,
    };
    if answered < QUERIES_PER_SOURCE {
        return Err(IntakeError::Partial { got: answered, report: Box::new(report) });
    }
    Ok(report)
}

/// Majority vote over the reports; ties and empty input give `Mixed`, unless
/// a tool hint is available to break the tie.
pub fn classify_content(reports: &[SourceReport], hint: Option<ContentType>) -> ContentType {
    vote(reports.iter().map(|r| r.content_vote))
        .or(hint)
        .unwrap_or(ContentType::Mixed)
}

pub struct IntakeContext<'a> {
    pub sample: &'a Sample,
    pub sampling: Sampling,
    pub dedup_threshold: f64,
    pub execution: Execution,
}

/// Runs all queries. Sources run concurrently; the four queries of one
/// source run in order so that replay logs stay deterministic.
pub fn run_intake(
    sources: &[(SourceId, &dyn ChatBackend)],
    ctx: &IntakeContext<'_>,
) -> Result<(Vec<SourceReport>, Vec<String>), IntakeError> {
    let ids: Vec<SourceId> = sources.iter().map(|(s, _)| s.clone()).collect();
    let queries = plan_queries(ctx.sample, &ids)?;
    let labels = ctx.sample.labels();
    let per_source = exec::map(sources, ctx.execution, |(source, backend)| {
        let responses: Vec<QueryResponse> = queries
            .iter()
            .filter(|q| &q.source == source)
            .map(|q| {
                let request = ChatRequest::new(
                    source.as_str(),
                    &ctx.sample.id,
                    vec![
                        Message::system(OBSERVE_SYSTEM),
                        Message::user(&q.prompt).with_audio(&ctx.sample.audio),
                    ],
                )
                .with_sampling(ctx.sampling);
                match backend.complete(&request) {
                    Ok(r) => QueryResponse { scope: q.scope, parsed: Some(parse_response(&r.text, &labels)), error: None },
                    Err(e) => QueryResponse { scope: q.scope, parsed: None, error: Some(e.to_string()) },
                }
            })
            .collect();
        let errors: Vec<String> = responses
            .iter()
            .filter_map(|r| r.error.as_ref().map(|e| format!("{source} {}: {e}", r.scope.label())))
            .collect();
        (synthesize_source(&responses, source, ctx.dedup_threshold), errors)
    });
    let mut reports = Vec::new();
    let mut warnings = Vec::new();
    for (result, errors) in per_source {
        warnings.extend(errors);
        match result {
            Ok(r) => reports.push(r),
            Err(IntakeError::Partial { got, report }) => {
                warnings.push(format!("partial intake for {}: {got} of {QUERIES_PER_SOURCE}", report.source));
                reports.push(*report);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((reports, warnings))
}
