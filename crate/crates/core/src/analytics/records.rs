//! Per-sample pipeline records, stored as schema-versioned JSONL.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::argumentation::{CompletenessReport, Decision, EvidenceBundle, Reasoning};
use crate::backends::{ChatExchange, ToolExchange};
use crate::contradiction::{HypothesisPlan, RiskAssessment};
use crate::evidence::{ContentType, CorroborationStatus};
use crate::intake::SourceReport;
use crate::sample::{Choice, Sample};
use crate::unified::{AgreementLevel, UnifiedAnalysis};
use crate::verification::{RoundLog, StopReason};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub intake_ms: u64,
    pub unified_ms: u64,
    pub verification_ms: u64,
    pub argumentation_ms: u64,
    pub total_ms: u64,
}

/// Everything one sample produced. The bundle alone is enough to re-run
/// argumentation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineRecord {
    pub schema_version: u32,
    pub sample_id: String,
    pub audio: String,
    pub duration_s: f64,
    pub question: String,
    pub choices: Vec<Choice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub content: ContentType,
    pub content_overridden: bool,
    pub reasoner_endpoint: String,
    pub source_reports: Vec<SourceReport>,
    pub agreement: AgreementLevel,
    pub unified: UnifiedAnalysis,
    pub rounds: Vec<RoundLog>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step1_stop: Option<StopReason>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step2_stop: Option<StopReason>,
    pub risk: Vec<RiskAssessment>,
    pub hypotheses: HypothesisPlan,
    pub bundle: EvidenceBundle,
    pub decision: Decision,
    pub reasoning: Reasoning,
    pub completeness: CompletenessReport,
    pub timings: Timings,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub exchanges: Vec<ChatExchange>,
    pub tool_exchanges: Vec<ToolExchange>,
}

impl PipelineRecord {
    pub fn sample(&self) -> Sample {
        Sample {
            id: self.sample_id.clone(),
            audio: self.audio.clone(),
            duration_s: self.duration_s,
            question: self.question.clone(),
            choices: self.choices.clone(),
            answer: self.answer.clone(),
            category: self.category.clone(),
        }
    }

    /// `None` when the gold answer is unknown.
    pub fn correct(&self) -> Option<bool> {
        self.answer.as_ref().map(|a| *a == self.decision.answer)
    }

    /// All per-query tentative predictions of all sources.
    pub fn predictions(&self) -> Vec<&str> {
        self.source_reports
            .iter()
            .flat_map(|r| r.predictions.iter().map(|p| p.label.as_str()))
            .collect()
    }

    pub fn corroborated_items(&self) -> usize {
        self.bundle
            .items
            .iter()
            .filter(|i| i.status == CorroborationStatus::Corroborated)
            .count()
    }
}

pub fn write_record(out: &mut impl Write, record: &PipelineRecord) -> io::Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n")
}

pub fn write_records(path: &Path, records: &[PipelineRecord]) -> io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        write_record(&mut out, r)?;
    }
    out.flush()
}

#[derive(Debug, Default)]
pub struct ReadRecords {
    pub records: Vec<PipelineRecord>,
    /// One entry per skipped line, with its 1-based line number.
    pub warnings: Vec<String>,
}

pub fn parse_records(reader: impl BufRead) -> io::Result<ReadRecords> {
    let mut read = ReadRecords::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<PipelineRecord>(&line) {
            Ok(r) if r.schema_version <= SCHEMA_VERSION => read.records.push(r),
            Ok(r) => read.warnings.push(format!("line {}: unsupported schema version {}", i + 1, r.schema_version)),
            Err(e) => read.warnings.push(format!("line {}: {e}", i + 1)),
        }
    }
    Ok(read)
}

pub fn read_records(path: &Path) -> io::Result<ReadRecords> {
    parse_records(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: usize) -> PipelineRecord {
        PipelineRecord {
            schema_version: SCHEMA_VERSION,
            sample_id: format!("s{i}"),
            answer: Some("A".into()),
            decision: Decision { answer: if i % 2 == 0 { "A" } else { "B" }.into(), confidence: 0.5, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_and_corrupt_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let records: Vec<_> = (0..1000).map(record).collect();
        write_records(&path, &records).unwrap();
        let read = read_records(&path).unwrap();
        assert_eq!(read.records, records);
        assert!(read.warnings.is_empty());

        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[6] = "{not json";
        std::fs::write(&path, lines.join("\n")).unwrap();
        let read = read_records(&path).unwrap();
        assert_eq!(read.records.len(), 999);
        assert_eq!(read.warnings.len(), 1);
        assert!(read.warnings[0].starts_with("line 7:"));
    }

    #[test]
    fn empty_and_unknown_fields() {
        assert!(parse_records(&b""[..]).unwrap().records.is_empty());
        let line = br#"{"schema_version": 1, "sample_id": "x", "some_future_field": [1, 2]}"#;
        let read = parse_records(&line[..]).unwrap();
        assert_eq!(read.records[0].sample_id, "x");
        assert_eq!(read.records[0].correct(), None);
    }
}
