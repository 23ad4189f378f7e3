//! Reasoning-rubric scoring and the tool-usefulness judgment schema. The
//! criteria themselves and the judging happen elsewhere.

use serde::{Deserialize, Serialize};

pub const DEFAULT_CRITERIA: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricsJudgment {
    pub sample_id: String,
    pub verdicts: Vec<bool>,
    pub answer_correct: bool,
    pub score: f64,
}

impl RubricsJudgment {
    pub fn new(sample_id: impl Into<String>, verdicts: Vec<bool>, answer_correct: bool) -> Self {
        let mut j = Self { sample_id: sample_id.into(), verdicts, answer_correct, score: 0.0 };
        j.score = rubrics_score(&j);
        j
    }
}

/// Fraction of satisfied criteria; zero for a wrong answer, whatever the
/// reasoning.
pub fn rubrics_score(judgment: &RubricsJudgment) -> f64 {
    if !judgment.answer_correct || judgment.verdicts.is_empty() {
        return 0.0;
    }
    judgment.verdicts.iter().filter(|v| **v).count() as f64 / judgment.verdicts.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Usefulness {
    Decisive,
    Supporting,
    Neutral,
    Misleading,
}

/// One judged tool invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolUsefulness {
    pub sample_id: String,
    pub tool: String,
    pub result_id: String,
    pub usefulness: Usefulness,
    #[serde(default)]
    pub rationale: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores() {
        assert_eq!(RubricsJudgment::new("s", vec![true, true, true, true, false], true).score, 0.8);
        assert_eq!(RubricsJudgment::new("s", vec![true; 5], false).score, 0.0);
        assert_eq!(RubricsJudgment::new("s", vec![false; 5], true).score, 0.0);
    }
}
