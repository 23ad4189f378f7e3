//! Scripted deterministic responder.
//!
//! A script describes, per audio URI, what each source model hears, what
//! each tool measures, which tools the reasoner proposes per round and any
//! contradictions it reports. Replies follow the prompt protocol so the
//! engine cannot tell a scripted run from a live one. Used to author
//! fixtures, run demos and drive the end-to-end tests offline.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, ToolBackend};
use crate::argumentation::REASONING_SECTIONS;
use crate::evidence::{ContentType, Observation, ObservationScope, SourceId, TimeRange};
use crate::intake::{self, SourceReport};
use crate::prompts;
use crate::tools::{RawToolOutput, ToolRequest};
use crate::unified;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub clips: BTreeMap<String, ClipScript>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClipScript {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<ContentType>,
    /// Keyed by source endpoint label.
    #[serde(default)]
    pub sources: BTreeMap<String, SourceScript>,
    #[serde(default)]
    pub tools: BTreeMap<String, ToolScript>,
    /// Proposals per Step-1 round.
    #[serde(default)]
    pub proposals: Vec<Vec<ToolRequestScript>>,
    /// Raw contradiction reply entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contradictions: Option<Value>,
    /// Overrides the weight argmax when selecting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceScript {
    /// `OBS` lines for the full-audio query (`claim | tags: .. | time: s-e`).
    #[serde(default)]
    pub full: Vec<String>,
    /// `OBS` lines for the three segment queries.
    #[serde(default)]
    pub segments: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<ContentType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<String>,
    /// Per query: full, then segments 1 to 3. Wins over `prediction`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predictions: Vec<String>,
    /// Replies with garbage instead of observations.
    #[serde(default)]
    pub garbled: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ToolScript {
    pub summary: String,
    #[serde(default)]
    pub fields: BTreeMap<String, Value>,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<f64>,
    /// Outputs for calls whose range overlaps the given one; first match wins.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ranged: Vec<RangedOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangedOutput {
    pub range: TimeRange,
    pub summary: String,
    #[serde(default)]
    pub fields: BTreeMap<String, Value>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRequestScript {
    pub tool: String,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_range: Option<TimeRange>,
}

impl Script {
    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BackendError::Malformed(format!("{}: {e}", path.display())))
    }

    fn clip(&self, audio: &str) -> Result<&ClipScript, BackendError> {
        self.clips
            .get(audio)
            .ok_or_else(|| BackendError::Malformed(format!("no script for audio {audio}")))
    }
}

pub struct SimulatedChat {
    script: Script,
}

impl SimulatedChat {
    pub fn new(script: Script) -> Self {
        Self { script }
    }

    fn observe(&self, clip: &ClipScript, request: &ChatRequest, text: &str) -> Result<String, BackendError> {
        let source = clip
            .sources
            .get(&request.endpoint)
            .ok_or_else(|| BackendError::Malformed(format!("no script for source {}", request.endpoint)))?;
        if source.garbled {
            return Ok("~~ ??? ~~".into());
        }
        let scope = prompts::header(text, "Scope").and_then(intake::parse_scope_line);
        let (lines, query) = match scope {
            Some(ObservationScope::Segment { index, .. }) => {
                (source.segments.get(index as usize).cloned().unwrap_or_default(), index as usize + 1)
            }
            _ => (source.full.clone(), 0),
        };
        let mut out: String = lines.iter().map(|l| format!("OBS: {l}\n")).collect();
        let content = source.content.or(clip.content).unwrap_or_default();
        out.push_str(&format!("CONTENT: {content}\n"));
        let prediction = source.predictions.get(query).or(source.prediction.as_ref());
        if let Some(p) = prediction {
            out.push_str(&format!("PREDICTION: {p}\n"));
        }
        Ok(out)
    }
}

/// Rebuilds the two source blocks of a corroboration prompt.
fn reports_from_prompt(text: &str) -> Vec<SourceReport> {
    let mut reports: Vec<SourceReport> = Vec::new();
    for line in text.lines() {
        if let Some(name) = line.strip_prefix("Source ").and_then(|l| l.strip_suffix(':')) {
            reports.push(SourceReport { source: SourceId::new(name), ..Default::default() });
        } else if let (Some(r), Some((id, claim))) = (reports.last_mut(), prompts::item_lines(line).pop()) {
            r.observations.push(Observation {
                id,
                source: r.source.clone(),
                scope: ObservationScope::FullAudio,
                claim,
                tags: Default::default(),
                time_range: None,
                tentative_prediction: None,
            });
        }
    }
    reports
}

/// `(label, weight)` from `Choice X aggregate weight: w` lines.
fn choice_weights(text: &str) -> Vec<(String, f64)> {
    text.lines()
        .filter_map(|l| {
            let rest = l.trim().strip_prefix("Choice ")?;
            let (label, rest) = rest.split_once(" aggregate weight:")?;
            let w: f64 = rest.split_whitespace().next()?.parse().ok()?;
            Some((label.to_string(), w))
        })
        .collect()
}

fn reasoning(text: &str) -> String {
    let items = prompts::item_lines(text);
    let (conflicts, evidence): (Vec<_>, Vec<_>) = items.iter().partition(|(_, rest)| rest.starts_with("conflict"));
    let selected = prompts::header(text, "Selected").unwrap_or("?");
    let mut out = String::new();
    for section in REASONING_SECTIONS {
        out.push_str(&format!("## {section}\n"));
        match section {
            "Evidence synthesis" => {
                for (id, rest) in &evidence {
                    out.push_str(&format!("- [{id}] {rest}\n"));
                }
            }
            "Conflict resolution" => {
                if conflicts.is_empty() {
                    out.push_str("No conflicts were recorded.\n");
                }
                for (id, rest) in &conflicts {
                    out.push_str(&format!("- [{id}] {rest}\n"));
                }
            }
            "Conclusion" => out.push_str(&format!("The answer is {selected}.\n")),
            _ => out.push_str("See the evidence above.\n"),
        }
        out.push('\n');
    }
    out
}

impl ChatBackend for SimulatedChat {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let text = request.user_text();
        let audio = prompts::header(text, "Audio")
            .ok_or_else(|| BackendError::Malformed("prompt has no Audio header".into()))?;
        let task = prompts::task(text);
        // selection and reasoning only need the prompt, so replays of
        // arbitrary logs work without a script entry
        let unscripted = ClipScript::default();
        let clip = match (self.script.clip(audio), task) {
            (Ok(c), _) => c,
            (Err(_), Some(prompts::TASK_SELECT | prompts::TASK_REASON)) => &unscripted,
            (Err(e), _) => return Err(e),
        };
        let reply = match task {
            Some(prompts::TASK_OBSERVE) => self.observe(clip, request, text)?,
            Some(prompts::TASK_CORROBORATE) => {
                let reports = reports_from_prompt(text);
                let verdicts = match reports.as_slice() {
                    [a, b] => unified::lexical_verdicts(a, b, 0.5),
                    _ => Vec::new(),
                };
                serde_json::to_string(&verdicts).map_err(|e| BackendError::Malformed(e.to_string()))?
            }
            Some(prompts::TASK_PROPOSE) => {
                let round: usize = prompts::header(text, "Round").and_then(|r| r.parse().ok()).unwrap_or(1);
                let proposals = clip.proposals.get(round.saturating_sub(1)).cloned().unwrap_or_default();
                serde_json::to_string(&proposals).map_err(|e| BackendError::Malformed(e.to_string()))?
            }
            Some(prompts::TASK_CONTRADICTIONS) => clip
                .contradictions
                .as_ref()
                .map(Value::to_string)
                .unwrap_or_else(|| "[]".into()),
            Some(prompts::TASK_SELECT) => {
                let label = clip.answer.clone().unwrap_or_else(|| {
                    choice_weights(text)
                        .into_iter()
                        .fold(None::<(String, f64)>, |best, (l, w)| match best {
                            Some((_, bw)) if bw >= w => best,
                            _ => Some((l, w)),
                        })
                        .map(|(l, _)| l)
                        .unwrap_or_else(|| "A".into())
                });
                format!("ANSWER: {label}")
            }
            Some(prompts::TASK_REASON) => reasoning(text),
            other => return Err(BackendError::Malformed(format!("unknown task {other:?}"))),
        };
        Ok(ChatResponse { text: reply, latency_ms: 0 })
    }
}

pub struct SimulatedTools {
    script: Script,
}

impl SimulatedTools {
    pub fn new(script: Script) -> Self {
        Self { script }
    }
}

impl ToolBackend for SimulatedTools {
    fn invoke(&self, request: &ToolRequest) -> Result<RawToolOutput, BackendError> {
        let clip = self.script.clip(&request.audio)?;
        let tool = clip
            .tools
            .get(&request.tool)
            .ok_or_else(|| BackendError::UnknownTool(request.tool.clone()))?;
        let ranged = request
            .time_range
            .and_then(|r| tool.ranged.iter().find(|o| o.range.overlaps(&r)));
        Ok(match ranged {
            Some(o) => RawToolOutput {
                summary: o.summary.clone(),
                fields: o.fields.clone(),
                confidence: o.confidence,
                relevance: tool.relevance,
                duration_ms: 0,
            },
            None => RawToolOutput {
                summary: tool.summary.clone(),
                fields: tool.fields.clone(),
                confidence: tool.confidence,
                relevance: tool.relevance,
                duration_ms: 0,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::Message;

    fn script() -> Script {
        serde_json::from_value(serde_json::json!({
            "clips": {"a.wav": {
                "content": "speech",
                "sources": {"qwen": {"full": ["two speakers talking | tags: speech"], "segments": [["a man speaks"], [], []], "predictions": ["B", "B", "A", "B"]}},
                "tools": {"speaker diarization": {"summary": "2 speakers", "fields": {"speaker_count": 2}, "confidence": 0.8,
                    "ranged": [{"range": {"start": 10.0, "end": 20.0}, "summary": "1 speaker", "fields": {"speaker_count": 1}, "confidence": 0.9}]}},
                "proposals": [[{"tool": "speaker diarization"}]]
            }}
        }))
        .unwrap()
    }

    fn ask(endpoint: &str, text: &str) -> Result<String, BackendError> {
        let req = ChatRequest::new(endpoint, "s", vec![Message::user(text)]);
        SimulatedChat::new(script()).complete(&req).map(|r| r.text)
    }

    #[test]
    fn observe_by_scope() {
        let full = ask("qwen", "Task: observe\nAudio: a.wav\nScope: full\n").unwrap();
        assert!(full.contains("OBS: two speakers talking"));
        assert!(full.contains("PREDICTION: B"));
        let seg = ask("qwen", "Task: observe\nAudio: a.wav\nScope: segment 2 of 3 (10.00-20.00s)\n").unwrap();
        assert!(seg.starts_with("CONTENT: speech"));
        assert!(seg.contains("PREDICTION: A"));
        assert!(ask("qwen", "Task: observe\nAudio: missing.wav\nScope: full\n").is_err());
    }

    #[test]
    fn select_takes_heaviest_choice() {
        let text = "Task: select_answer\nAudio: a.wav\nChoice A aggregate weight: 0.2 (items: x)\nChoice B aggregate weight: 0.5 (items: y)\n";
        assert_eq!(ask("r", text).unwrap(), "ANSWER: B");
        let tie = "Task: select_answer\nAudio: a.wav\nChoice A aggregate weight: 0.5\nChoice B aggregate weight: 0.5\n";
        assert_eq!(ask("r", tie).unwrap(), "ANSWER: A");
    }

    #[test]
    fn tools_use_ranged_overrides() {
        let tools = SimulatedTools::new(script());
        let whole = tools.invoke(&ToolRequest::new("speaker diarization", "a.wav")).unwrap();
        assert_eq!(whole.summary, "2 speakers");
        let part = tools
            .invoke(&ToolRequest::new("speaker diarization", "a.wav").with_range(TimeRange::new(12.0, 14.0).unwrap()))
            .unwrap();
        assert_eq!(part.summary, "1 speaker");
        assert!(matches!(
            tools.invoke(&ToolRequest::new("nope", "a.wav")),
            Err(BackendError::UnknownTool(_))
        ));
    }
}
