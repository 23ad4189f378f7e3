//! Replays recorded exchanges from pipeline records.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex};

use super::{
    tool_digest, BackendError, ChatBackend, ChatExchange, ChatRequest, ChatResponse, ToolBackend,
    ToolExchange,
};
use crate::analytics::records::read_records;
use crate::tools::{RawToolOutput, ToolRequest};

type Key = (String, String);

/// Recorded chat queues keyed by (sample, endpoint) and tool outputs keyed by
/// request digest.
#[derive(Default)]
pub struct ReplayLog {
    chats: Mutex<HashMap<Key, VecDeque<ChatExchange>>>,
    tools: HashMap<String, ToolExchange>,
}

impl ReplayLog {
    pub fn from_exchanges(
        chats: impl IntoIterator<Item = ChatExchange>,
        tools: impl IntoIterator<Item = ToolExchange>,
    ) -> Self {
        let mut queues: HashMap<Key, Vec<ChatExchange>> = HashMap::new();
        for c in chats {
            queues.entry((c.sample_id.clone(), c.endpoint.clone())).or_default().push(c);
        }
        let chats = queues
            .into_iter()
            .map(|(k, mut v)| {
                v.sort_by_key(|c| c.seq);
                (k, VecDeque::from(v))
            })
            .collect();
        let tools = tools.into_iter().map(|t| (t.digest.clone(), t)).collect();
        Self { chats: Mutex::new(chats), tools }
    }

    pub fn from_records(path: &Path) -> Result<Arc<Self>, BackendError> {
        let read = read_records(path).map_err(|e| BackendError::Io(e.to_string()))?;
        let mut chats = Vec::new();
        let mut tools = Vec::new();
        for r in read.records {
            chats.extend(r.exchanges);
            tools.extend(r.tool_exchanges);
        }
        Ok(Arc::new(Self::from_exchanges(chats, tools)))
    }

    /// Recorded chat calls not yet consumed.
    pub fn remaining(&self) -> usize {
        self.chats.lock().unwrap_or_else(|e| e.into_inner()).values().map(VecDeque::len).sum()
    }

    /// The earliest unconsumed exchange of this sample and endpoint with a
    /// matching digest. Skipping ahead lets a partial replay (for example
    /// argumentation only) consume just the calls it makes.
    fn next_chat(&self, request: &ChatRequest) -> Result<ChatExchange, BackendError> {
        let mut chats = self.chats.lock().unwrap_or_else(|e| e.into_inner());
        let key = (request.sample_id.clone(), request.endpoint.clone());
        let exhausted = || BackendError::ReplayExhausted {
            sample_id: request.sample_id.clone(),
            endpoint: request.endpoint.clone(),
        };
        let queue = chats.get_mut(&key).filter(|q| !q.is_empty()).ok_or_else(exhausted)?;
        let requested = request.digest();
        match queue.iter().position(|c| c.digest == requested) {
            Some(i) => Ok(queue.remove(i).expect("position is in range")),
            None => Err(BackendError::ReplayDivergence {
                endpoint: request.endpoint.clone(),
                recorded: queue[0].digest.clone(),
                requested,
            }),
        }
    }
}

pub struct ReplayChat {
    log: Arc<ReplayLog>,
}

impl ReplayChat {
    pub fn new(log: Arc<ReplayLog>) -> Self {
        Self { log }
    }
}

impl ChatBackend for ReplayChat {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let ex = self.log.next_chat(request)?;
        match (ex.response, ex.error) {
            (Some(text), _) => Ok(ChatResponse { text, latency_ms: ex.latency_ms }),
            (None, err) => Err(BackendError::Transport(err.unwrap_or_else(|| "recorded failure".into()))),
        }
    }
}

pub struct ReplayTools {
    log: Arc<ReplayLog>,
}

impl ReplayTools {
    pub fn new(log: Arc<ReplayLog>) -> Self {
        Self { log }
    }
}

impl ToolBackend for ReplayTools {
    fn invoke(&self, request: &ToolRequest) -> Result<RawToolOutput, BackendError> {
        let digest = tool_digest(request);
        let ex = self.log.tools.get(&digest).ok_or_else(|| BackendError::FixtureMiss {
            endpoint: format!("tool:{}", request.tool),
            digest: digest.clone(),
        })?;
        match (&ex.output, &ex.error) {
            (Some(o), _) => Ok(o.clone()),
            (None, Some(e)) if e.starts_with("unknown tool") => Err(BackendError::UnknownTool(request.tool.clone())),
            (None, e) => Err(BackendError::Transport(e.clone().unwrap_or_else(|| "recorded failure".into()))),
        }
    }
}
