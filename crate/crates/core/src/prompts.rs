//! Prompt framing shared by the engine and the scripted simulator.
//!
//! Every prompt starts with `Key: value` header lines (`Task`, `Audio`,
//! `Scope`, `Round`, ...). Listed entities use `[id] ...` lines. Structured
//! replies are JSON arrays, located leniently inside the reply text.

use serde_json::Value;

use crate::sample::Choice;

pub const TASK_OBSERVE: &str = "observe";
pub const TASK_CORROBORATE: &str = "corroborate";
pub const TASK_PROPOSE: &str = "propose_tools";
pub const TASK_CONTRADICTIONS: &str = "detect_contradictions";
pub const TASK_SELECT: &str = "select_answer";
pub const TASK_REASON: &str = "write_reasoning";

/// Value of the first `key: value` line.
pub fn header<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|line| {
        let (k, v) = line.split_once(':')?;
        (k.trim() == key).then(|| v.trim())
    })
}

pub fn task(text: &str) -> Option<&str> {
    header(text, "Task")
}

pub fn choice_block(choices: &[Choice]) -> String {
    let mut out = String::from("Choices:\n");
    for c in choices {
        out.push_str(&format!("{}. {}\n", c.label, c.text));
    }
    out
}

/// `(label, text)` pairs from the `Choices:` block.
pub fn parse_choice_block(text: &str) -> Vec<(String, String)> {
    text.lines()
        .skip_while(|l| l.trim() != "Choices:")
        .skip(1)
        .map_while(|l| {
            let (label, rest) = l.split_once(". ")?;
            let label = label.trim();
            (!label.is_empty() && label.chars().all(|c| c.is_ascii_uppercase()))
                .then(|| (label.to_string(), rest.trim().to_string()))
        })
        .collect()
}

/// `(id, rest)` for every `[id] rest` line.
pub fn item_lines(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| {
            let l = l.trim_start();
            let rest = l.strip_prefix('[')?;
            let (id, tail) = rest.split_once(']')?;
            (!id.is_empty() && !id.contains(' ')).then(|| (id.to_string(), tail.trim().to_string()))
        })
        .collect()
}

/// Lines of the block that follows a heading line, up to the next blank line.
pub fn block<'a>(text: &'a str, heading: &str) -> Vec<&'a str> {
    text.lines()
        .skip_while(|l| l.trim() != heading)
        .skip(1)
        .take_while(|l| !l.trim().is_empty())
        .collect()
}

/// The first JSON array in `text`, tolerating prose or code fences around it.
pub fn extract_json_array(text: &str) -> Option<Vec<Value>> {
    let start = text.find('[')?;
    let end = text.rfind(']')?;
    if end <= start {
        return None;
    }
    if let Ok(Value::Array(v)) = serde_json::from_str(&text[start..=end]) {
        return Some(v);
    }
    // a leading "[id]" style token may precede the array; try later openings
    text[start + 1..]
        .find('[')
        .and_then(|i| extract_json_array(&text[start + 1 + i..]))
}
