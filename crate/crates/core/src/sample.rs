//! Input sample: audio reference, question and labelled choices.

use std::collections::BTreeSet;

use serde::{Deserialize, Deserializer, Serialize};

use crate::text;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    /// Opaque URI resolved by the remote services.
    pub audio: String,
    pub duration_s: f64,
    pub question: String,
    #[serde(deserialize_with = "choices_from_any")]
    pub choices: Vec<Choice>,
    /// Gold choice label, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

/// Labels "A", "B", ... for positional choices.
pub fn choice_label(index: usize) -> String {
    let mut n = index;
    let mut label = String::new();
    loop {
        label.insert(0, (b'A' + (n % 26) as u8) as char);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    label
}

pub fn label_choices<S: AsRef<str>>(texts: &[S]) -> Vec<Choice> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| Choice {
            label: choice_label(i),
            text: t.as_ref().to_string(),
        })
        .collect()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ChoiceRepr {
    Text(String),
    Labelled(Choice),
}

fn choices_from_any<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Choice>, D::Error> {
    let raw: Vec<ChoiceRepr> = Vec::deserialize(d)?;
    Ok(raw
        .into_iter()
        .enumerate()
        .map(|(i, c)| match c {
            ChoiceRepr::Text(text) => Choice {
                label: choice_label(i),
                text,
            },
            ChoiceRepr::Labelled(c) => c,
        })
        .collect())
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        audio: impl Into<String>,
        duration_s: f64,
        question: impl Into<String>,
        choices: &[&str],
    ) -> Self {
        Self {
            id: id.into(),
            audio: audio.into(),
            duration_s,
            question: question.into(),
            choices: label_choices(choices),
            answer: None,
            category: None,
        }
    }

    pub fn labels(&self) -> Vec<&str> {
        self.choices.iter().map(|c| c.label.as_str()).collect()
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.choices.iter().any(|c| c.label == label)
    }
}

/// Content words of each choice that are not shared by every choice.
pub fn distinctive_tokens(choices: &[Choice]) -> Vec<BTreeSet<String>> {
    let sets: Vec<BTreeSet<String>> = choices.iter().map(|c| text::content_tokens(&c.text)).collect();
    if sets.len() < 2 {
        return sets;
    }
    let common: BTreeSet<String> = sets
        .iter()
        .skip(1)
        .fold(sets[0].clone(), |acc, s| acc.intersection(s).cloned().collect());
    sets.into_iter()
        .map(|s| s.difference(&common).cloned().collect())
        .collect()
}

/// Labels of the choices a claim speaks to.
pub fn supported_choices(claim: &str, choices: &[Choice]) -> Vec<String> {
    let claim_tokens = text::content_tokens(claim);
    distinctive_tokens(choices)
        .iter()
        .zip(choices)
        .filter(|(d, _)| !d.is_disjoint(&claim_tokens))
        .map(|(_, c)| c.label.clone())
        .collect()
}

/// Lexical relevance of a claim to the question and choices, in `[0.4, 1]`.
pub fn lexical_relevance(claim: &str, question: &str, choices: &[Choice]) -> f64 {
    let claim_tokens = text::content_tokens(claim);
    if claim_tokens.is_empty() {
        return 0.4;
    }
    let mut target = text::content_tokens(question);
    for c in choices {
        target.extend(text::content_tokens(&c.text));
    }
    0.4 + 0.6 * text::containment(&claim_tokens, &target)
}
