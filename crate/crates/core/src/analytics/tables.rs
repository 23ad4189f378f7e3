//! Descriptive tables over pipeline records: accuracy by source agreement,
//! by decision confidence and by corroborated-item count, plus the rate at
//! which the final answer overrides every source prediction.
//!
//! Records without a gold answer do not enter the accuracy tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::records::PipelineRecord;
use crate::unified::AgreementLevel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Row {
    pub label: String,
    pub n: usize,
    pub correct: usize,
}

impl Row {
    pub fn accuracy(&self) -> f64 {
        if self.n == 0 { 0.0 } else { self.correct as f64 / self.n as f64 }
    }

    /// Accuracy in percent, rounded to one decimal.
    pub fn percent(&self) -> f64 {
        (self.accuracy() * 1000.0).round() / 10.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn row(&self, label: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.label == label)
    }
}

fn graded(records: &[PipelineRecord]) -> impl Iterator<Item = (&PipelineRecord, bool)> {
    records.iter().filter_map(|r| r.correct().map(|c| (r, c)))
}

/// Rows in the given label order; empty rows are dropped.
fn tally<'a>(
    title: &str,
    labels: &[&str],
    records: &'a [PipelineRecord],
    band: impl Fn(&'a PipelineRecord) -> usize,
) -> Table {
    let mut rows: Vec<Row> = labels.iter().map(|l| Row { label: l.to_string(), n: 0, correct: 0 }).collect();
    for (r, ok) in graded(records) {
        let row = &mut rows[band(r)];
        row.n += 1;
        row.correct += ok as usize;
    }
    rows.retain(|r| r.n > 0);
    Table { title: title.into(), rows }
}

pub fn stratify_agreement(records: &[PipelineRecord]) -> Table {
    let mut t = tally("Accuracy by source agreement", &["unanimous", "majority", "conflicting"], records, |r| {
        match r.agreement {
            AgreementLevel::Unanimous => 0,
            AgreementLevel::Majority => 1,
            AgreementLevel::Conflicting => 2,
        }
    });
    if !t.rows.is_empty() {
        let n = t.rows.iter().map(|r| r.n).sum();
        let correct = t.rows.iter().map(|r| r.correct).sum();
        t.rows.push(Row { label: "overall".into(), n, correct });
    }
    t
}

pub const CALIBRATION_BANDS: [&str; 4] = [">=0.80", "0.60-0.79", "0.40-0.59", "<0.40"];

pub fn confidence_band(confidence: f64) -> usize {
    if confidence >= 0.80 {
        0
    } else if confidence >= 0.60 {
        1
    } else if confidence >= 0.40 {
        2
    } else {
        3
    }
}

pub fn calibration_buckets(records: &[PipelineRecord]) -> Table {
    tally("Accuracy by decision confidence", &CALIBRATION_BANDS, records, |r| confidence_band(r.decision.confidence))
}

pub const CORROBORATION_BANDS: [&str; 3] = ["0", "1-5", ">=6"];

pub fn corroboration_band(count: usize) -> usize {
    match count {
        0 => 0,
        1..=5 => 1,
        _ => 2,
    }
}

pub fn corroboration_stats(records: &[PipelineRecord]) -> Table {
    tally("Accuracy by corroborated items", &CORROBORATION_BANDS, records, |r| {
        corroboration_band(r.corroborated_items())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideRate {
    pub n_overridden: usize,
    /// Records with at least one recorded prediction.
    pub n_considered: usize,
    /// Records without predictions, left out of the denominator.
    pub n_excluded: usize,
    pub fraction: f64,
}

/// Records whose final answer differs from every recorded source
/// prediction.
pub fn override_rate(records: &[PipelineRecord]) -> OverrideRate {
    let mut n_overridden = 0;
    let mut n_considered = 0;
    for r in records {
        let preds = r.predictions();
        if preds.is_empty() {
            continue;
        }
        n_considered += 1;
        n_overridden += preds.iter().all(|p| *p != r.decision.answer) as usize;
    }
    OverrideRate {
        n_overridden,
        n_considered,
        n_excluded: records.len() - n_considered,
        fraction: if n_considered == 0 { 0.0 } else { n_overridden as f64 / n_considered as f64 },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub agreement: Table,
    pub calibration: Table,
    pub corroboration: Table,
    pub overrides: OverrideRate,
}

pub fn analyze(records: &[PipelineRecord]) -> Analysis {
    Analysis {
        agreement: stratify_agreement(records),
        calibration: calibration_buckets(records),
        corroboration: corroboration_stats(records),
        overrides: override_rate(records),
    }
}

impl Analysis {
    fn tables(&self) -> [&Table; 3] {
        [&self.agreement, &self.calibration, &self.corroboration]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in self.tables() {
            let _ = writeln!(out, "{}", t.title);
            let _ = writeln!(out, "  {:<12} {:>6} {:>8} {:>9}", "band", "n", "correct", "accuracy");
            for r in &t.rows {
                let _ = writeln!(out, "  {:<12} {:>6} {:>8} {:>8.1}%", r.label, r.n, r.correct, r.percent());
            }
            out.push('\n');
        }
        let o = &self.overrides;
        let _ = writeln!(
            out,
            "Overrides: {}/{} = {:.1}% ({} records without predictions excluded)",
            o.n_overridden,
            o.n_considered,
            o.fraction * 100.0,
            o.n_excluded
        );
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("table,band,n,correct,accuracy\n");
        for (name, t) in ["agreement", "calibration", "corroboration"].iter().zip(self.tables()) {
            for r in &t.rows {
                let _ = writeln!(out, "{name},{},{},{},{:.4}", r.label, r.n, r.correct, r.accuracy());
            }
        }
        let o = &self.overrides;
        let _ = writeln!(out, "override,overridden,{},{},{:.4}", o.n_considered, o.n_overridden, o.fraction);
        out
    }
}
