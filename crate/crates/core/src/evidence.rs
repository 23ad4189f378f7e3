//! Observation and evidence types plus the reliability-tier scoring rules.
//!
//! Every evidence item carries a tier. The tier fixes a confidence cap and an
//! evidence weight; confidence is built from a base value, a corroboration
//! multiplier, a direct-answer bonus and a domain factor, then clamped to the
//! cap. Items that come from an audio language model never exceed the LALM
//! hard cap, whatever bonuses apply.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::serde_util::{self, is_false};

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("scoring config has no policy for tier {0}")]
    MissingTier(ReliabilityTier),
    #[error("invalid scoring input: {0}")]
    InvalidInput(String),
    #[error("invalid scoring config: {0}")]
    Config(String),
}

/// Reliability tier, ordered by reproducibility: `Analytic > Probabilistic >
/// Heuristic > Lalm`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReliabilityTier {
    Lalm,
    Heuristic,
    Probabilistic,
    Analytic,
}

impl ReliabilityTier {
    pub const ALL: [ReliabilityTier; 4] = [
        ReliabilityTier::Analytic,
        ReliabilityTier::Probabilistic,
        ReliabilityTier::Heuristic,
        ReliabilityTier::Lalm,
    ];

    /// Deterministic or well-validated measurements.
    pub fn is_reproducible(self) -> bool {
        matches!(self, ReliabilityTier::Analytic | ReliabilityTier::Probabilistic)
    }
}

impl fmt::Display for ReliabilityTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ReliabilityTier::Analytic => "analytic",
            ReliabilityTier::Probabilistic => "probabilistic",
            ReliabilityTier::Heuristic => "heuristic",
            ReliabilityTier::Lalm => "lalm",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierPolicy {
    pub tier: ReliabilityTier,
    pub cap: f64,
    pub weight: f64,
    pub base: f64,
}

/// Per-tier values as stored in the config map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierParams {
    pub cap: f64,
    pub weight: f64,
    pub base: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    pub corroboration_multiplier: f64,
    pub direct_answer_bonus: f64,
    pub lalm_hard_cap: f64,
    pub keyword_adjust: f64,
    pub out_of_domain_factor: f64,
    pub tiers: BTreeMap<ReliabilityTier, TierParams>,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        let tiers = [
            (ReliabilityTier::Analytic, 0.90, 1.0, 0.60),
            (ReliabilityTier::Probabilistic, 0.75, 0.75, 0.50),
            (ReliabilityTier::Heuristic, 0.60, 0.50, 0.40),
            (ReliabilityTier::Lalm, 0.70, 0.40, 0.45),
        ]
        .into_iter()
        .map(|(tier, cap, weight, base)| (tier, TierParams { cap, weight, base }))
        .collect();
        Self {
            corroboration_multiplier: 1.5,
            direct_answer_bonus: 1.3,
            lalm_hard_cap: 0.70,
            keyword_adjust: 0.15,
            out_of_domain_factor: 0.6,
            tiers,
        }
    }
}

impl ScoringConfig {
    /// Loads a JSON config; absent keys take defaults.
    pub fn from_json_file(path: &Path) -> Result<Self, ScoringError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScoringError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self, ScoringError> {
        let config: ScoringConfig =
            serde_json::from_str(text).map_err(|e| ScoringError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        let err = |m: String| Err(ScoringError::Config(m));
        if self.corroboration_multiplier < 1.0 || self.direct_answer_bonus < 1.0 {
            return err("multipliers must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.keyword_adjust) {
            return err("keyword_adjust must lie in [0, 1]".into());
        }
        if !(self.out_of_domain_factor > 0.0 && self.out_of_domain_factor <= 1.0) {
            return err("out_of_domain_factor must lie in (0, 1]".into());
        }
        for tier in ReliabilityTier::ALL {
            let p = self.tier_policy(tier)?;
            for (name, v) in [("cap", p.cap), ("weight", p.weight)] {
                if !(0.0..=1.0).contains(&v) {
                    return err(format!("{tier} {name} {v} outside [0, 1]"));
                }
            }
            if !(p.base > 0.0 && p.base <= p.cap) {
                return err(format!("{tier} base {} must lie in (0, cap]", p.base));
            }
        }
        let lalm_cap = self.tier_policy(ReliabilityTier::Lalm)?.cap;
        if (lalm_cap - self.lalm_hard_cap).abs() > 1e-12 {
            return err(format!(
                "lalm_hard_cap {} differs from lalm tier cap {lalm_cap}",
                self.lalm_hard_cap
            ));
        }
        Ok(())
    }

    pub fn tier_policy(&self, tier: ReliabilityTier) -> Result<TierPolicy, ScoringError> {
        tier_policy(tier, self)
    }

    /// Tier weight, zero for a tier the config does not define.
    pub fn tier_weight(&self, tier: ReliabilityTier) -> f64 {
        self.tiers.get(&tier).map(|p| p.weight).unwrap_or(0.0)
    }

    pub fn tier_cap(&self, tier: ReliabilityTier) -> f64 {
        let cap = self.tiers.get(&tier).map(|p| p.cap).unwrap_or(0.0);
        if tier == ReliabilityTier::Lalm {
            cap.min(self.lalm_hard_cap)
        } else {
            cap
        }
    }

    pub fn domain_factor(&self, tool_domains: &BTreeSet<ContentType>, content: ContentType) -> f64 {
        domain_factor(tool_domains, content, self.out_of_domain_factor)
    }
}

pub fn tier_policy(tier: ReliabilityTier, config: &ScoringConfig) -> Result<TierPolicy, ScoringError> {
    let p = config
        .tiers
        .get(&tier)
        .ok_or(ScoringError::MissingTier(tier))?;
    Ok(TierPolicy {
        tier,
        cap: p.cap,
        weight: p.weight,
        base: p.base,
    })
}

/// Confidence of an evidence item.
///
/// `min(cap, base × domain_factor × corroboration × direct_answer)`, with LALM
/// items additionally held at the hard cap. The bonuses compose
/// multiplicatively and the result is clamped once.
pub fn score_evidence(
    base: f64,
    tier: ReliabilityTier,
    corroborated: bool,
    direct_answer: bool,
    domain_factor: f64,
    config: &ScoringConfig,
) -> Result<f64, ScoringError> {
    let policy = config.tier_policy(tier)?;
    if !(base > 0.0 && base <= policy.cap) {
        return Err(ScoringError::InvalidInput(format!(
            "base {base} outside (0, {}] for {tier}",
            policy.cap
        )));
    }
    if !(domain_factor > 0.0 && domain_factor <= 1.0) {
        return Err(ScoringError::InvalidInput(format!(
            "domain factor {domain_factor} outside (0, 1]"
        )));
    }
    let mut raw = base * domain_factor;
    if corroborated {
        raw *= config.corroboration_multiplier;
    }
    if direct_answer {
        raw *= config.direct_answer_bonus;
    }
    let mut confidence = raw.min(policy.cap);
    if tier == ReliabilityTier::Lalm {
        confidence = confidence.min(config.lalm_hard_cap);
    }
    Ok(confidence)
}

/// `tier weight × confidence × relevance`.
pub fn evidence_weight(item: &EvidenceItem, config: &ScoringConfig) -> f64 {
    config.tier_weight(item.tier) * item.confidence * item.relevance
}

/// 1.0 for in-domain use, the out-of-domain factor otherwise. Mixed content
/// counts as in-domain for any speech or music tool.
pub fn domain_factor(
    tool_domains: &BTreeSet<ContentType>,
    content: ContentType,
    out_of_domain: f64,
) -> f64 {
    let in_domain = tool_domains.contains(&content)
        || (content == ContentType::Mixed
            && (tool_domains.contains(&ContentType::Speech)
                || tool_domains.contains(&ContentType::Music)));
    if in_domain {
        1.0
    } else {
        out_of_domain
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentType {
    Speech,
    Music,
    #[default]
    Mixed,
    Environmental,
}

impl ContentType {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_lowercase().as_str() {
            "speech" => Some(ContentType::Speech),
            "music" => Some(ContentType::Music),
            "mixed" => Some(ContentType::Mixed),
            "environmental" | "environment" | "sound" | "sounds" => {
                Some(ContentType::Environmental)
            }
            _ => None,
        }
    }

    pub fn includes_music(self) -> bool {
        matches!(self, ContentType::Music | ContentType::Mixed)
    }
}

impl fmt::Display for ContentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ContentType::Speech => "speech",
            ContentType::Music => "music",
            ContentType::Mixed => "mixed",
            ContentType::Environmental => "environmental",
        };
        f.write_str(s)
    }
}

/// A closed-open interval of audio time in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: f64,
    pub end: f64,
}

impl TimeRange {
    pub fn new(start: f64, end: f64) -> Option<Self> {
        (start >= 0.0 && start < end && end.is_finite()).then_some(Self { start, end })
    }

    pub fn overlaps(&self, other: &TimeRange) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn union(&self, other: &TimeRange) -> TimeRange {
        TimeRange {
            start: self.start.min(other.start),
            end: self.end.max(other.end),
        }
    }

    /// Pads both sides and clips to `[0, duration]`.
    pub fn padded(&self, pad: f64, duration: f64) -> TimeRange {
        TimeRange {
            start: (self.start - pad).max(0.0),
            end: (self.end + pad).min(duration),
        }
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

impl fmt::Display for TimeRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}-{:.2}s", self.start, self.end)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceId(pub String);

impl SourceId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservationScope {
    FullAudio,
    Segment { index: u8, start: f64, end: f64 },
}

impl ObservationScope {
    pub fn time_range(&self) -> Option<TimeRange> {
        match *self {
            ObservationScope::FullAudio => None,
            ObservationScope::Segment { start, end, .. } => Some(TimeRange { start, end }),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ObservationScope::FullAudio => "full".into(),
            ObservationScope::Segment { index, .. } => format!("s{}", index + 1),
        }
    }

    pub fn is_segment(&self) -> bool {
        matches!(self, ObservationScope::Segment { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub id: String,
    pub source: SourceId,
    pub scope: ObservationScope,
    pub claim: String,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_range: Option<TimeRange>,
    /// The source model's answer guess for the query that produced this
    /// observation. Logged for analytics, never shown to argumentation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tentative_prediction: Option<String>,
}

impl Observation {
    /// Explicit time range if reported, else the query segment.
    pub fn effective_range(&self) -> Option<TimeRange> {
        self.time_range.or_else(|| self.scope.time_range())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "snake_case")]
pub enum EvidenceOrigin {
    LalmObservation(SourceId),
    ToolMeasurement(String),
}

impl EvidenceOrigin {
    pub fn is_lalm(&self) -> bool {
        matches!(self, EvidenceOrigin::LalmObservation(_))
    }

    pub fn source(&self) -> Option<&SourceId> {
        match self {
            EvidenceOrigin::LalmObservation(s) => Some(s),
            EvidenceOrigin::ToolMeasurement(_) => None,
        }
    }

    pub fn tool(&self) -> Option<&str> {
        match self {
            EvidenceOrigin::ToolMeasurement(t) => Some(t),
            EvidenceOrigin::LalmObservation(_) => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            EvidenceOrigin::LalmObservation(s) => format!("lalm:{s}"),
            EvidenceOrigin::ToolMeasurement(t) => format!("tool:{t}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorroborationStatus {
    Corroborated,
    SourceSpecific,
    Disagreement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskLevel {
    Low,
    Medium,
    High,
    SegmentationArtifact,
    Speculative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub id: String,
    pub origin: EvidenceOrigin,
    pub claim: String,
    pub tier: ReliabilityTier,
    pub status: CorroborationStatus,
    #[serde(serialize_with = "serde_util::score")]
    pub confidence: f64,
    #[serde(serialize_with = "serde_util::score")]
    pub relevance: f64,
    pub risk: RiskLevel,
    #[serde(default)]
    pub corroborated_by: Vec<String>,
    #[serde(default)]
    pub direct_answer: bool,
    #[serde(serialize_with = "serde_util::score")]
    pub domain_factor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_range: Option<TimeRange>,
    /// Confidence assigned by corroboration before tier caps were applied.
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        serialize_with = "serde_util::score_opt"
    )]
    pub assessed_confidence: Option<f64>,
    /// Set once the keyword reclassification has moved this item.
    #[serde(default, skip_serializing_if = "is_false")]
    pub keyword_adjusted: bool,
}

impl EvidenceItem {
    pub fn is_lalm(&self) -> bool {
        self.origin.is_lalm()
    }
}
