//! Shared claim tokenizer.
//!
//! Every lexical comparison in the engine (observation deduplication, keyword
//! reclassification, corroboration fallback, completeness checks) goes through
//! this module so that two claims are compared the same way everywhere.

use std::collections::{BTreeMap, BTreeSet};

const STOP_WORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "around", "as", "at", "audio",
    "be", "been", "being", "both", "but", "by", "can", "clip", "could", "during", "each", "for",
    "from", "has", "have", "he", "her", "here", "his", "i", "if", "in", "into", "is", "it", "its",
    "likely", "may", "might", "more", "most", "of", "on", "one's", "or", "other", "our", "over",
    "recording", "seems", "she", "so", "some", "such", "than", "that", "the", "their", "them",
    "then", "there", "these", "they", "this", "those", "through", "throughout", "to", "up", "very",
    "was", "we", "were", "what", "when", "where", "which", "while", "who", "will", "with",
    "within", "would", "you",
];

const NEGATIONS: &[&str] = &[
    "no", "not", "never", "none", "without", "absent", "nothing", "neither", "nor", "isn't",
    "aren't", "wasn't", "weren't", "doesn't", "don't", "didn't", "cannot", "can't", "lacks",
    "lack", "missing",
];

const NUMBER_WORDS: &[(&str, f64)] = &[
    ("zero", 0.0),
    ("one", 1.0),
    ("single", 1.0),
    ("two", 2.0),
    ("three", 3.0),
    ("four", 4.0),
    ("five", 5.0),
    ("six", 6.0),
    ("seven", 7.0),
    ("eight", 8.0),
    ("nine", 9.0),
    ("ten", 10.0),
    ("eleven", 11.0),
    ("twelve", 12.0),
    ("thirteen", 13.0),
    ("fourteen", 14.0),
    ("fifteen", 15.0),
    ("sixteen", 16.0),
    ("seventeen", 17.0),
    ("eighteen", 18.0),
    ("nineteen", 19.0),
    ("twenty", 20.0),
];

/// Lowercased raw tokens; keeps decimal points inside numbers.
pub fn raw_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '.' || c == '\''))
        .map(|t| t.trim_matches(|c| c == '.' || c == '\''))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn is_negation(token: &str) -> bool {
    NEGATIONS.contains(&token)
}

fn is_stop(token: &str) -> bool {
    STOP_WORDS.contains(&token) || is_negation(token)
}

/// Numeric value of a token, accepting digits and spelled-out small numbers.
pub fn number_value(token: &str) -> Option<f64> {
    if let Ok(v) = token.parse::<f64>() {
        if v.is_finite() {
            return Some(v);
        }
    }
    NUMBER_WORDS
        .iter()
        .find(|(w, _)| *w == token)
        .map(|(_, v)| *v)
}

fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Crude suffix stripper. Good enough to fold plurals and verb forms.
pub fn stem(token: &str) -> String {
    if token.chars().any(|c| c.is_ascii_digit()) {
        return token.to_string();
    }
    let t = token.trim_end_matches("'s");
    let n = t.len();
    if n > 4 && t.ends_with("ies") {
        return format!("{}y", &t[..n - 3]);
    }
    if n > 4 && t.ends_with("sses") {
        return t[..n - 2].to_string();
    }
    if n > 5 && t.ends_with("ing") {
        return t[..n - 3].to_string();
    }
    if n > 4 && t.ends_with("ed") && !t.ends_with("eed") {
        return t[..n - 2].to_string();
    }
    if n > 3 && t.ends_with('s') && !t.ends_with("ss") && !t.ends_with("us") {
        return t[..n - 1].to_string();
    }
    t.to_string()
}

/// Normalized content words: stop-words and negations removed, stemmed,
/// spelled-out numbers folded to digits.
pub fn content_tokens(text: &str) -> BTreeSet<String> {
    raw_tokens(text)
        .into_iter()
        .filter(|t| !is_stop(t))
        .map(|t| match number_value(&t) {
            Some(v) => format_number(v),
            None => stem(&t),
        })
        .collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Fraction of `part` found in `whole`.
pub fn containment(part: &BTreeSet<String>, whole: &BTreeSet<String>) -> f64 {
    if part.is_empty() {
        return 0.0;
    }
    part.intersection(whole).count() as f64 / part.len() as f64
}

/// Claim similarity after normalization.
pub fn claim_similarity(a: &str, b: &str) -> f64 {
    jaccard(&content_tokens(a), &content_tokens(b))
}

/// `(unit, value)` pairs such as `("speaker", 3.0)` from "three speakers".
pub fn quantities(text: &str) -> BTreeMap<String, f64> {
    let tokens = raw_tokens(text);
    let mut out = BTreeMap::new();
    for (i, tok) in tokens.iter().enumerate() {
        let Some(value) = number_value(tok) else {
            continue;
        };
        // "3 distinct speakers": skip up to one modifier
        for next in tokens.iter().skip(i + 1).take(2) {
            if number_value(next).is_some() || is_stop(next) {
                break;
            }
            let unit = stem(next);
            if unit.len() > 2 && !is_modifier(&unit) {
                out.entry(unit).or_insert(value);
                break;
            }
        }
    }
    out
}

fn is_modifier(unit: &str) -> bool {
    matches!(
        unit,
        "distinct" | "different" | "separate" | "main" | "clear" | "loud" | "short" | "long"
    )
}

/// Terms that appear under a negation ("no piano", "without vocals").
pub fn negated_terms(text: &str) -> BTreeSet<String> {
    let tokens = raw_tokens(text);
    let mut out = BTreeSet::new();
    for (i, tok) in tokens.iter().enumerate() {
        if !is_negation(tok) {
            continue;
        }
        if tok == "absent" || tok == "missing" {
            if let Some(prev) = tokens[..i].iter().rev().find(|t| !is_stop(t)) {
                out.insert(stem(prev));
            }
            continue;
        }
        for next in tokens.iter().skip(i + 1).take(3) {
            if is_stop(next) {
                continue;
            }
            out.insert(stem(next));
        }
    }
    out
}

fn positive_terms(text: &str) -> BTreeSet<String> {
    let negated = negated_terms(text);
    content_tokens(text)
        .into_iter()
        .filter(|t| !negated.contains(t))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Conflict {
    /// Same quantity, different value.
    Numeric { unit: String, left: f64, right: f64 },
    /// A term asserted on one side and negated on the other.
    Negation { term: String },
}

/// Detects an explicit conflict between two claims.
pub fn conflict(a: &str, b: &str) -> Option<Conflict> {
    conflict_with_quantities(a, &quantities(a), b, &quantities(b))
}

/// Like [`conflict`] but with caller-supplied quantities (e.g. structured
/// tool fields merged with the parsed summary).
pub fn conflict_with_quantities(
    a: &str,
    qa: &BTreeMap<String, f64>,
    b: &str,
    qb: &BTreeMap<String, f64>,
) -> Option<Conflict> {
    for (unit, left) in qa {
        if let Some(right) = qb.get(unit) {
            if (left - right).abs() > 1e-9 {
                return Some(Conflict::Numeric {
                    unit: unit.clone(),
                    left: *left,
                    right: *right,
                });
            }
        }
    }
    let (neg_a, neg_b) = (negated_terms(a), negated_terms(b));
    let (pos_a, pos_b) = (positive_terms(a), positive_terms(b));
    if let Some(term) = neg_a.iter().find(|t| pos_b.contains(*t)) {
        return Some(Conflict::Negation { term: term.clone() });
    }
    if let Some(term) = neg_b.iter().find(|t| pos_a.contains(*t)) {
        return Some(Conflict::Negation { term: term.clone() });
    }
    None
}

/// Whether `text` mentions every term of `needle` (used for tool names).
pub fn mentions(text_tokens: &BTreeSet<String>, needle: &str) -> bool {
    let n = content_tokens(needle);
    !n.is_empty() && n.is_subset(text_tokens)
}
