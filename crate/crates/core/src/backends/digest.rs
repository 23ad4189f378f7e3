//! Canonical request digests for fixture lookup and replay checks.

use std::collections::BTreeMap;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{Message, Role};
use crate::tools::ToolRequest;

/// Collapses runs of whitespace and trims.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of endpoint and whitespace-normalized messages. Sampling
/// parameters and the sample id are deliberately left out.
pub fn chat_digest(endpoint: &str, messages: &[Message]) -> String {
    #[derive(Serialize)]
    struct Canon<'a> {
        kind: &'static str,
        endpoint: &'a str,
        messages: Vec<CanonMessage<'a>>,
    }
    #[derive(Serialize)]
    struct CanonMessage<'a> {
        role: Role,
        content: String,
        audio: Option<&'a str>,
    }
    let canon = Canon {
        kind: "chat",
        endpoint,
        messages: messages
            .iter()
            .map(|m| CanonMessage {
                role: m.role,
                content: normalize_whitespace(&m.content),
                audio: m.audio.as_deref(),
            })
            .collect(),
    };
    sha_hex(&serde_json::to_vec(&canon).unwrap_or_default())
}

/// Digest of tool, audio digest, time range and params.
pub fn tool_digest(request: &ToolRequest) -> String {
    #[derive(Serialize)]
    struct Canon<'a> {
        kind: &'static str,
        tool: &'a str,
        audio: String,
        time_range: Option<[f64; 2]>,
        params: &'a BTreeMap<String, String>,
    }
    let canon = Canon {
        kind: "tool",
        tool: &request.tool,
        audio: sha_hex(request.audio.as_bytes()),
        time_range: request.time_range.map(|r| [r.start, r.end]),
        params: &request.params,
    };
    sha_hex(&serde_json::to_vec(&canon).unwrap_or_default())
}
