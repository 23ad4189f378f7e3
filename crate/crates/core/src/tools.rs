//! Tool catalog: reliability tier, scope, domains and music-only flag for
//! every acoustic tool, plus the request/result records exchanged with tool
//! services.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evidence::{ContentType, ReliabilityTier, ScoringConfig, TimeRange};
use crate::serde_util;

pub const SPEECH_LLM_QWEN: &str = "speech llm query (qwen3)";
pub const SPEECH_LLM_STEPAUDIO: &str = "speech llm query (stepaudio)";
pub const TRANSCRIPTION: &str = "transcription";
pub const DIARIZATION: &str = "diarization + transcription";
pub const MELODY: &str = "melody transcription";
pub const INSTRUMENTS: &str = "instrument detection";
pub const HARMONIC: &str = "harmonic analysis";
pub const BEAT_ONSET: &str = "beat & onset detection";
pub const ENVIRONMENT: &str = "environment detection";
pub const SYNTHETIC_SPEECH: &str = "synthetic speech detection";
pub const ENERGY: &str = "energy dynamics";
pub const SPECTRAL: &str = "spectral features";
pub const AUDIO_QUALITY: &str = "audio quality";
pub const SCENE: &str = "scene context";
pub const CHORDS: &str = "chord progression";
pub const SPEAKER_COUNT: &str = "speaker count";
pub const EVENT_SEQUENCE: &str = "event sequence";
pub const TEMPORAL_SEGMENTS: &str = "temporal segments";
pub const AUDIO_EFFECTS: &str = "audio effects";
pub const TEMPO: &str = "tempo tracking";
pub const RHYTHM: &str = "rhythm analysis";
pub const SOURCE_SEPARATION: &str = "source separation";
pub const VOCAL_TECHNIQUE: &str = "vocal technique";
pub const INSTRUMENT_SEQUENCE: &str = "instrument sequence";
pub const RHYTHM_PATTERNS: &str = "rhythm patterns";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog failed validation: {}", .0.violations.join("; "))]
    Invalid(ValidationReport),
    #[error("cannot read catalog {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolScope {
    WholeAudio,
    SegmentLevel,
    Both,
}

impl ToolScope {
    pub fn whole(self) -> bool {
        matches!(self, ToolScope::WholeAudio | ToolScope::Both)
    }

    pub fn segment(self) -> bool {
        matches!(self, ToolScope::SegmentLevel | ToolScope::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Step1,
    Step2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub tier: ReliabilityTier,
    pub scope: ToolScope,
    pub domains: BTreeSet<ContentType>,
    #[serde(default)]
    pub music_only: bool,
    /// Output is post-processed by an LLM before it is reported.
    #[serde(default)]
    pub interpreted: bool,
    /// Offered to the agent in the step menus. Disabled tools stay in the
    /// catalog and can still be invoked by name.
    #[serde(default = "yes")]
    pub selectable: bool,
}

fn yes() -> bool {
    true
}

impl ToolSpec {
    fn offered(&self, step: Step, content: ContentType) -> bool {
        let scope_ok = match step {
            Step::Step1 => self.scope.whole(),
            Step::Step2 => self.scope.segment(),
        };
        self.selectable && scope_ok && (!self.music_only || content.includes_music())
    }
}

/// Expected step-menu sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCounts {
    pub step1: usize,
    pub step1_with_music: usize,
    pub step2: usize,
    pub step2_with_music: usize,
}

impl Default for StepCounts {
    fn default() -> Self {
        Self {
            step1: 12,
            step1_with_music: 23,
            step2: 5,
            step2_with_music: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToolCatalog {
    pub tools: Vec<ToolSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// A catalog that passed [`validate_catalog`]. Step menus are only available
/// on this type.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedCatalog {
    catalog: ToolCatalog,
}

impl ToolCatalog {
    pub fn from_json_file(path: &Path) -> Result<Self, CatalogError> {
        let io = |message: String| CatalogError::Io {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| io(e.to_string()))
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn validate(self) -> Result<ValidatedCatalog, CatalogError> {
        self.validate_with(StepCounts::default())
    }

    pub fn validate_with(self, counts: StepCounts) -> Result<ValidatedCatalog, CatalogError> {
        let report = validate_catalog_with(&self, counts);
        if report.is_valid() {
            Ok(ValidatedCatalog { catalog: self })
        } else {
            Err(CatalogError::Invalid(report))
        }
    }

    fn count(&self, step: Step, content: ContentType) -> usize {
        self.tools.iter().filter(|t| t.offered(step, content)).count()
    }
}

impl ValidatedCatalog {
    pub fn catalog(&self) -> &ToolCatalog {
        &self.catalog
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.catalog.get(name)
    }

    pub fn len(&self) -> usize {
        self.catalog.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.catalog.tools.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ToolSpec> {
        self.catalog.tools.iter()
    }
}

/// Step menu for the given content type, in catalog order.
pub fn tools_for_step(catalog: &ValidatedCatalog, step: Step, content: ContentType) -> Vec<&ToolSpec> {
    catalog
        .catalog
        .tools
        .iter()
        .filter(|t| t.offered(step, content))
        .collect()
}

pub fn validate_catalog(catalog: &ToolCatalog) -> ValidationReport {
    validate_catalog_with(catalog, StepCounts::default())
}

pub fn validate_catalog_with(catalog: &ToolCatalog, counts: StepCounts) -> ValidationReport {
    let mut violations = Vec::new();
    let checks = [
        ("step-1", Step::Step1, ContentType::Speech, counts.step1),
        ("step-1 (music)", Step::Step1, ContentType::Music, counts.step1_with_music),
        ("step-2", Step::Step2, ContentType::Speech, counts.step2),
        ("step-2 (music)", Step::Step2, ContentType::Music, counts.step2_with_music),
    ];
    for (label, step, content, expected) in checks {
        let n = catalog.count(step, content);
        if n != expected {
            violations.push(format!("{label} count {n} ≠ {expected}"));
        }
    }
    let mut seen = BTreeSet::new();
    for t in &catalog.tools {
        if !seen.insert(t.name.as_str()) {
            violations.push(format!("duplicate tool name \"{}\"", t.name));
        }
        if t.music_only && !t.domains.contains(&ContentType::Music) {
            violations.push(format!("\"{}\" is music-only but lacks the music domain", t.name));
        }
        if t.domains.is_empty() {
            violations.push(format!("\"{}\" has no domains", t.name));
        }
    }
    ValidationReport { violations }
}

/// The 25-tool default catalog.
pub fn build_default_catalog() -> ToolCatalog {
    use ContentType::*;
    use ReliabilityTier::*;
    use ToolScope::*;

    let speech: &[ContentType] = &[Speech];
    let music: &[ContentType] = &[Music];
    let general: &[ContentType] = &[Speech, Music, Environmental];
    let ambient: &[ContentType] = &[Environmental, Speech];

    #[rustfmt::skip]
    let rows: [(&str, ReliabilityTier, ToolScope, &[ContentType], bool, bool, bool); 25] = [
        // name, tier, scope, domains, music_only, interpreted, selectable
        (SPEECH_LLM_QWEN,      Lalm,          WholeAudio,   general, false, false, true),
        (TRANSCRIPTION,        Probabilistic, Both,         speech,  false, false, true),
        (DIARIZATION,          Probabilistic, Both,         speech,  false, false, true),
        (SPEECH_LLM_STEPAUDIO, Lalm,          WholeAudio,   general, false, false, true),
        (MELODY,               Probabilistic, WholeAudio,   music,   true,  true,  true),
        (INSTRUMENTS,          Probabilistic, Both,         music,   true,  true,  true),
        (HARMONIC,             Analytic,      Both,         music,   true,  false, true),
        (BEAT_ONSET,           Analytic,      Both,         music,   true,  true,  true),
        (ENVIRONMENT,          Heuristic,     WholeAudio,   ambient, false, false, true),
        (SYNTHETIC_SPEECH,     Probabilistic, WholeAudio,   speech,  false, true,  true),
        (ENERGY,               Analytic,      Both,         general, false, false, true),
        (SPECTRAL,             Analytic,      WholeAudio,   general, false, false, true),
        (AUDIO_QUALITY,        Analytic,      WholeAudio,   general, false, true,  true),
        (SCENE,                Heuristic,     WholeAudio,   ambient, false, false, true),
        (CHORDS,               Heuristic,     WholeAudio,   music,   true,  true,  true),
        (SPEAKER_COUNT,        Probabilistic, WholeAudio,   speech,  false, false, true),
        (EVENT_SEQUENCE,       Probabilistic, Both,         general, false, true,  true),
        (TEMPORAL_SEGMENTS,    Analytic,      SegmentLevel, general, false, true,  true),
        (AUDIO_EFFECTS,        Analytic,      WholeAudio,   general, false, true,  false),
        (TEMPO,                Analytic,      WholeAudio,   music,   true,  true,  true),
        (RHYTHM,               Heuristic,     WholeAudio,   music,   true,  true,  true),
        (SOURCE_SEPARATION,    Probabilistic, WholeAudio,   music,   true,  false, true),
        (VOCAL_TECHNIQUE,      Heuristic,     WholeAudio,   music,   true,  true,  true),
        (INSTRUMENT_SEQUENCE,  Probabilistic, WholeAudio,   music,   true,  false, true),
        (RHYTHM_PATTERNS,      Heuristic,     WholeAudio,   music,   true,  true,  true),
    ];

    ToolCatalog {
        tools: rows
            .iter()
            .map(|&(name, tier, scope, domains, music_only, interpreted, selectable)| ToolSpec {
                name: name.to_string(),
                tier,
                scope,
                domains: domains.iter().copied().collect(),
                music_only,
                interpreted,
                selectable,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRequest {
    pub tool: String,
    pub audio: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_range: Option<TimeRange>,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

impl ToolRequest {
    pub fn new(tool: impl Into<String>, audio: impl Into<String>) -> Self {
        Self {
            tool: tool.into(),
            audio: audio.into(),
            time_range: None,
            params: BTreeMap::new(),
        }
    }

    pub fn with_range(mut self, range: TimeRange) -> Self {
        self.time_range = Some(range);
        self
    }

    /// Identity of the call within one sample: tool, range and params.
    pub fn call_digest(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            tool: &'a str,
            time_range: Option<(f64, f64)>,
            params: &'a BTreeMap<String, String>,
        }
        let key = Key {
            tool: &self.tool,
            time_range: self.time_range.map(|r| (r.start, r.end)),
            params: &self.params,
        };
        let bytes = serde_json::to_vec(&key).unwrap_or_default();
        hex::encode(&Sha256::digest(&bytes)[..12])
    }
}

impl fmt::Display for ToolRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tool)?;
        if let Some(r) = self.time_range {
            write!(f, " [{r}]")?;
        }
        for (k, v) in &self.params {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ToolOutput {
    pub summary: String,
    #[serde(default)]
    pub fields: BTreeMap<String, serde_json::Value>,
}

/// What a tool service returns before the engine applies tier caps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawToolOutput {
    pub summary: String,
    #[serde(default)]
    pub fields: BTreeMap<String, serde_json::Value>,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<f64>,
    #[serde(default)]
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub id: String,
    pub request: ToolRequest,
    pub tier: ReliabilityTier,
    pub output: ToolOutput,
    #[serde(serialize_with = "serde_util::score")]
    pub raw_confidence: f64,
    #[serde(serialize_with = "serde_util::score")]
    pub capped_confidence: f64,
    #[serde(serialize_with = "serde_util::score")]
    pub relevance: f64,
    pub duration_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ToolResult {
    pub fn is_failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn failed(id: String, request: ToolRequest, tier: ReliabilityTier, reason: String) -> Self {
        Self {
            id,
            request,
            tier,
            output: ToolOutput::default(),
            raw_confidence: 0.0,
            capped_confidence: 0.0,
            relevance: 0.0,
            duration_ms: 0,
            error: Some(reason),
        }
    }

    /// Integer field, e.g. `speaker_count`.
    pub fn count_field(&self, key: &str) -> Option<u32> {
        self.output.fields.get(key)?.as_u64().map(|v| v as u32)
    }

    /// Numeric fields named `<unit>_count` as quantities keyed by unit.
    pub fn field_quantities(&self) -> BTreeMap<String, f64> {
        self.output
            .fields
            .iter()
            .filter_map(|(k, v)| {
                let unit = k.strip_suffix("_count")?;
                Some((crate::text::stem(unit), v.as_f64()?))
            })
            .collect()
    }
}

/// Applies the tier cap and domain factor: `min(cap, raw × domain_factor)`.
pub fn cap_tool_confidence(
    mut result: ToolResult,
    spec: &ToolSpec,
    content: ContentType,
    config: &ScoringConfig,
) -> ToolResult {
    let raw = result.raw_confidence.clamp(0.0, 1.0);
    let factor = config.domain_factor(&spec.domains, content);
    result.tier = spec.tier;
    result.capped_confidence = (raw * factor).min(config.tier_cap(spec.tier));
    result
}

impl fmt::Display for ToolScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToolScope::WholeAudio => "whole",
            ToolScope::SegmentLevel => "segment",
            ToolScope::Both => "both",
        })
    }
}
