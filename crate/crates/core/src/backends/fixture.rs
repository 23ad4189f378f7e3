//! Fixture store: one JSON file per request digest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    chat_digest, tool_digest, BackendError, ChatBackend, ChatRequest, ChatResponse, Message,
    ToolBackend,
};
use crate::tools::{RawToolOutput, ToolRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatFixture {
    pub digest: String,
    pub endpoint: String,
    /// Kept for humans editing fixtures; lookup uses the digest only.
    #[serde(default)]
    pub messages: Vec<Message>,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolFixture {
    pub digest: String,
    pub request: ToolRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<RawToolOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<T>, BackendError> {
    match fs::read_to_string(path) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| BackendError::Io(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(BackendError::Io(format!("{}: {e}", path.display()))),
    }
}

fn write_json<T: Serialize>(dir: &Path, digest: &str, value: &T) -> Result<PathBuf, BackendError> {
    fs::create_dir_all(dir).map_err(|e| BackendError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(format!("{digest}.json"));
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| BackendError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

pub struct FixtureChat {
    dir: PathBuf,
}

impl FixtureChat {
    pub fn open(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf() }
    }

    pub fn write(dir: &Path, request: &ChatRequest, response: &str) -> Result<PathBuf, BackendError> {
        let digest = chat_digest(&request.endpoint, &request.messages);
        let fixture = ChatFixture {
            digest: digest.clone(),
            endpoint: request.endpoint.clone(),
            messages: request.messages.clone(),
            response: response.to_string(),
        };
        write_json(dir, &digest, &fixture)
    }
}

impl ChatBackend for FixtureChat {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let digest = request.digest();
        let fixture: Option<ChatFixture> = read_json(&self.dir.join(format!("{digest}.json")))?;
        match fixture {
            Some(f) => Ok(ChatResponse { text: f.response, latency_ms: 0 }),
            None => Err(BackendError::FixtureMiss {
                endpoint: request.endpoint.clone(),
                digest,
            }),
        }
    }
}

pub struct FixtureTools {
    dir: PathBuf,
}

impl FixtureTools {
    pub fn open(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf() }
    }

    pub fn write(
        dir: &Path,
        request: &ToolRequest,
        result: &Result<RawToolOutput, BackendError>,
    ) -> Result<PathBuf, BackendError> {
        let digest = tool_digest(request);
        let (output, error) = match result {
            Ok(o) => (Some(o.clone()), None),
            Err(BackendError::UnknownTool(t)) => (None, Some(format!("unknown tool: {t}"))),
            Err(e) => (None, Some(e.to_string())),
        };
        let fixture = ToolFixture { digest: digest.clone(), request: request.clone(), output, error };
        write_json(dir, &digest, &fixture)
    }
}

impl ToolBackend for FixtureTools {
    fn invoke(&self, request: &ToolRequest) -> Result<RawToolOutput, BackendError> {
        let digest = tool_digest(request);
        let fixture: Option<ToolFixture> = read_json(&self.dir.join(format!("{digest}.json")))?;
        match fixture {
            Some(ToolFixture { output: Some(o), .. }) => Ok(o),
            Some(ToolFixture { error, .. }) => {
                let reason = error.unwrap_or_else(|| "fixture has no output".into());
                if reason.starts_with("unknown tool") {
                    Err(BackendError::UnknownTool(request.tool.clone()))
                } else {
                    Err(BackendError::Malformed(reason))
                }
            }
            None => Err(BackendError::FixtureMiss { endpoint: format!("tool:{}", request.tool), digest }),
        }
    }
}
