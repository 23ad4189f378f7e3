//! Wire boundary to chat-completion services and tool services.
//!
//! Every backend is blocking and shareable across threads. Offline kinds
//! (fixture, replay, simulated) never touch the network.

mod digest;
mod fixture;
mod http;
mod recording;
mod replay;
mod simulated;

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::tools::{RawToolOutput, ToolRequest};

pub use digest::{chat_digest, normalize_whitespace, tool_digest};
pub use fixture::{FixtureChat, FixtureTools, ChatFixture, ToolFixture};
pub use http::{HttpChat, HttpTools};
pub use recording::{RecordingChat, RecordingTools};
pub use replay::{ReplayChat, ReplayLog, ReplayTools};
pub use simulated::{ClipScript, Script, SimulatedChat, SimulatedTools, SourceScript, ToolScript};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("http status {status} after {attempts} attempt(s): {body}")]
    Http { status: u16, attempts: u32, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no fixture for {endpoint} (digest {digest})")]
    FixtureMiss { endpoint: String, digest: String },
    #[error("replay log exhausted for {endpoint} in sample {sample_id}")]
    ReplayExhausted { sample_id: String, endpoint: String },
    #[error("replay divergence on {endpoint}: recorded {recorded}, requested {requested}")]
    ReplayDivergence {
        endpoint: String,
        recorded: String,
        requested: String,
    },
    #[error("unknown tool \"{0}\"")]
    UnknownTool(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("rejected before sending: {0}")]
    Precondition(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<String>,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into(), audio: None }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into(), audio: None }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into(), audio: None }
    }

    pub fn with_audio(mut self, audio: impl Into<String>) -> Self {
        self.audio = Some(audio.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for Sampling {
    fn default() -> Self {
        Self { temperature: 0.6, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    /// Logical endpoint id, e.g. `source_a` or `reasoner`.
    pub endpoint: String,
    /// Owning sample; routes replay lookups, not part of the digest.
    #[serde(default)]
    pub sample_id: String,
    pub messages: Vec<Message>,
    #[serde(default)]
    pub sampling: Sampling,
}

impl ChatRequest {
    pub fn new(endpoint: impl Into<String>, sample_id: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            endpoint: endpoint.into(),
            sample_id: sample_id.into(),
            messages,
            sampling: Sampling::default(),
        }
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn digest(&self) -> String {
        chat_digest(&self.endpoint, &self.messages)
    }

    /// Text of the last user message.
    pub fn user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    pub fn audio(&self) -> Option<&str> {
        self.messages.iter().find_map(|m| m.audio.as_deref())
    }

    fn check(&self) -> Result<(), BackendError> {
        if self.messages.iter().any(|m| m.role == Role::User) {
            Ok(())
        } else {
            Err(BackendError::Precondition("chat request has no user message".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(default)]
    pub latency_ms: u64,
}

/// One logged chat call, enough to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub endpoint: String,
    pub sample_id: String,
    /// Per-endpoint call index within the sample.
    pub seq: u32,
    pub digest: String,
    pub messages: Vec<Message>,
    pub sampling: Sampling,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub latency_ms: u64,
}

/// One logged tool call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolExchange {
    pub digest: String,
    pub request: ToolRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<RawToolOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

pub trait ToolBackend: Send + Sync {
    fn invoke(&self, request: &ToolRequest) -> Result<RawToolOutput, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

impl<T: ToolBackend + ?Sized> ToolBackend for Arc<T> {
    fn invoke(&self, request: &ToolRequest) -> Result<RawToolOutput, BackendError> {
        (**self).invoke(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    RemoteHttp,
    Fixture,
    Replay,
    /// Scripted deterministic responder, used to author fixtures and demos.
    Simulated,
}

impl BackendKind {
    pub fn is_offline(self) -> bool {
        !matches!(self, BackendKind::RemoteHttp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendProfile {
    pub kind: BackendKind,
    /// Full URL for remote profiles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Fixture directory, replay JSONL or simulation script.
    #[serde(default, skip_serializing_if = "Option::is_none", alias = "fixture_path")]
    pub path: Option<PathBuf>,
    /// Source label used in evidence for source roles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout() -> f64 {
    120.0
}

fn default_retries() -> u32 {
    2
}

fn default_in_flight() -> usize {
    8
}

impl BackendProfile {
    pub fn new(kind: BackendKind) -> Self {
        Self {
            kind,
            endpoint: None,
            model: None,
            path: None,
            label: None,
            timeout_s: default_timeout(),
            retries: default_retries(),
            max_in_flight: default_in_flight(),
        }
    }

    pub fn remote(url: impl Into<String>) -> Self {
        Self { endpoint: Some(url.into()), ..Self::new(BackendKind::RemoteHttp) }
    }

    pub fn at_path(kind: BackendKind, path: impl Into<PathBuf>) -> Self {
        Self { path: Some(path.into()), ..Self::new(kind) }
    }

    fn require_path(&self) -> Result<&Path, BackendError> {
        self.path
            .as_deref()
            .ok_or_else(|| BackendError::Io(format!("{:?} profile needs a path", self.kind)))
    }

    fn require_endpoint(&self) -> Result<&str, BackendError> {
        self.endpoint
            .as_deref()
            .ok_or_else(|| BackendError::Io("remote profile needs an endpoint URL".into()))
    }
}

pub fn open_chat(profile: &BackendProfile) -> Result<Arc<dyn ChatBackend>, BackendError> {
    Ok(match profile.kind {
        BackendKind::RemoteHttp => Arc::new(HttpChat::new(
            profile.require_endpoint()?,
            profile.model.clone(),
            profile.timeout_s,
            profile.retries,
        )?),
        BackendKind::Fixture => Arc::new(FixtureChat::open(profile.require_path()?)),
        BackendKind::Replay => Arc::new(ReplayChat::new(ReplayLog::from_records(profile.require_path()?)?)),
        BackendKind::Simulated => Arc::new(SimulatedChat::new(Script::from_file(profile.require_path()?)?)),
    })
}

pub fn open_tools(profile: &BackendProfile) -> Result<Arc<dyn ToolBackend>, BackendError> {
    Ok(match profile.kind {
        BackendKind::RemoteHttp => Arc::new(HttpTools::new(
            profile.require_endpoint()?,
            profile.timeout_s,
            profile.retries,
        )?),
        BackendKind::Fixture => Arc::new(FixtureTools::open(profile.require_path()?)),
        BackendKind::Replay => Arc::new(ReplayTools::new(ReplayLog::from_records(profile.require_path()?)?)),
        BackendKind::Simulated => Arc::new(SimulatedTools::new(Script::from_file(profile.require_path()?)?)),
    })
}

/// One-shot chat call through a profile.
pub fn chat_complete(profile: &BackendProfile, request: &ChatRequest) -> Result<String, BackendError> {
    Ok(open_chat(profile)?.complete(request)?.text)
}

/// One-shot tool call through a profile.
pub fn tool_invoke(profile: &BackendProfile, request: &ToolRequest) -> Result<RawToolOutput, BackendError> {
    open_tools(profile)?.invoke(request)
}

/// Per-sample call log shared by the logging wrappers.
#[derive(Default)]
pub struct CallLog {
    chats: Mutex<Vec<ChatExchange>>,
    tools: Mutex<Vec<ToolExchange>>,
}

impl CallLog {
    /// Chat exchanges ordered by endpoint then call index, independent of
    /// thread interleaving.
    pub fn chats(&self) -> Vec<ChatExchange> {
        let mut v = self.chats.lock().unwrap_or_else(|e| e.into_inner()).clone();
        v.sort_by(|a, b| a.endpoint.cmp(&b.endpoint).then(a.seq.cmp(&b.seq)));
        v
    }

    /// Tool exchanges ordered by digest, deduplicated.
    pub fn tools(&self) -> Vec<ToolExchange> {
        let mut v = self.tools.lock().unwrap_or_else(|e| e.into_inner()).clone();
        v.sort_by(|a, b| a.digest.cmp(&b.digest));
        v.dedup_by(|a, b| a.digest == b.digest);
        v
    }
}

/// Wraps a chat backend and appends every exchange to a [`CallLog`].
pub struct LoggedChat<'a> {
    inner: &'a dyn ChatBackend,
    log: &'a CallLog,
    clock: &'a dyn Clock,
}

impl<'a> LoggedChat<'a> {
    pub fn new(inner: &'a dyn ChatBackend, log: &'a CallLog, clock: &'a dyn Clock) -> Self {
        Self { inner, log, clock }
    }
}

impl ChatBackend for LoggedChat<'_> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.check()?;
        let started = self.clock.now_ms();
        let result = self.inner.complete(request);
        let latency_ms = self.clock.now_ms().saturating_sub(started);
        let mut chats = self.log.chats.lock().unwrap_or_else(|e| e.into_inner());
        let seq = chats
            .iter()
            .filter(|c| c.endpoint == request.endpoint && c.sample_id == request.sample_id)
            .count() as u32;
        let (response, error) = match &result {
            Ok(r) => (Some(r.text.clone()), None),
            Err(e) => (None, Some(e.to_string())),
        };
        chats.push(ChatExchange {
            endpoint: request.endpoint.clone(),
            sample_id: request.sample_id.clone(),
            seq,
            digest: request.digest(),
            messages: request.messages.clone(),
            sampling: request.sampling,
            response,
            error,
            latency_ms,
        });
        result.map(|r| ChatResponse { text: r.text, latency_ms })
    }
}

/// Wraps a tool backend and appends every exchange to a [`CallLog`].
pub struct LoggedTools<'a> {
    inner: &'a dyn ToolBackend,
    log: &'a CallLog,
}

impl<'a> LoggedTools<'a> {
    pub fn new(inner: &'a dyn ToolBackend, log: &'a CallLog) -> Self {
        Self { inner, log }
    }
}

impl ToolBackend for LoggedTools<'_> {
    fn invoke(&self, request: &ToolRequest) -> Result<RawToolOutput, BackendError> {
        let result = self.inner.invoke(request);
        let (output, error) = match &result {
            Ok(o) => (Some(o.clone()), None),
            Err(e) => (None, Some(e.to_string())),
        };
        self.log
            .tools
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(ToolExchange {
                digest: tool_digest(request),
                request: request.clone(),
                output,
                error,
            });
        result
    }
}
