//! Chat-completion and tool clients over JSON/HTTP.

use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, ToolBackend};
use crate::tools::{RawToolOutput, ToolRequest};

enum Attempt {
    Done(Value),
    Retry(BackendError),
    Fail(BackendError),
}

struct Poster {
    client: Client,
    url: String,
    retries: u32,
}

impl Poster {
    fn new(url: &str, timeout_s: f64, retries: u32) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(Duration::from_secs_f64(timeout_s.max(0.001)))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self { client, url: url.to_string(), retries })
    }

    fn attempt(&self, body: &Value, attempts: u32) -> Attempt {
        let resp = match self.client.post(&self.url).json(body).send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(BackendError::Timeout { attempts }),
            Err(e) => return Attempt::Retry(BackendError::Transport(e.to_string())),
        };
        let status = resp.status();
        let text = resp.text().unwrap_or_default();
        if status.is_success() {
            return match serde_json::from_str(&text) {
                Ok(v) => Attempt::Done(v),
                Err(e) => Attempt::Fail(BackendError::Malformed(e.to_string())),
            };
        }
        let err = BackendError::Http { status: status.as_u16(), attempts, body: text };
        if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
            Attempt::Retry(err)
        } else {
            Attempt::Fail(err)
        }
    }

    /// Posts `body`, retrying transport errors, timeouts, 429 and 5xx. Makes
    /// at most `retries + 1` attempts.
    fn post(&self, body: &Value) -> Result<Value, BackendError> {
        let mut last = BackendError::Transport("no attempt made".into());
        for attempt in 1..=self.retries + 1 {
            match self.attempt(body, attempt) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) => {
                    tracing::warn!(url = %self.url, attempt, error = %e, "request failed");
                    last = e;
                }
            }
        }
        Err(last)
    }
}

pub struct HttpChat {
    poster: Poster,
    model: Option<String>,
}

impl HttpChat {
    pub fn new(url: &str, model: Option<String>, timeout_s: f64, retries: u32) -> Result<Self, BackendError> {
        Ok(Self { poster: Poster::new(url, timeout_s, retries)?, model })
    }

    pub fn body(&self, request: &ChatRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| match &m.audio {
                None => json!({"role": m.role, "content": m.content}),
                Some(uri) => json!({
                    "role": m.role,
                    "content": [
                        {"type": "text", "text": m.content},
                        {"type": "audio_url", "audio_url": {"url": uri}},
                    ],
                }),
            })
            .collect();
        let mut body = json!({
            "model": self.model.clone().unwrap_or_else(|| request.endpoint.clone()),
            "messages": messages,
            "temperature": request.sampling.temperature,
        });
        if let Some(seed) = request.sampling.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

impl ChatBackend for HttpChat {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let started = Instant::now();
        let value = self.poster.post(&self.body(request))?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))?;
        Ok(ChatResponse {
            text: text.to_string(),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

pub struct HttpTools {
    poster: Poster,
}

impl HttpTools {
    pub fn new(url: &str, timeout_s: f64, retries: u32) -> Result<Self, BackendError> {
        Ok(Self { poster: Poster::new(url, timeout_s, retries)? })
    }
}

impl ToolBackend for HttpTools {
    fn invoke(&self, request: &ToolRequest) -> Result<RawToolOutput, BackendError> {
        let body = json!({
            "tool": request.tool,
            "audio": request.audio,
            "time_range": request.time_range.map(|r| [r.start, r.end]),
            "params": request.params,
        });
        let started = Instant::now();
        match self.poster.post(&body) {
            Ok(v) => {
                let mut out: RawToolOutput =
                    serde_json::from_value(v).map_err(|e| BackendError::Malformed(e.to_string()))?;
                if out.duration_ms == 0 {
                    out.duration_ms = started.elapsed().as_millis() as u64;
                }
                Ok(out)
            }
            Err(BackendError::Http { status: 404, .. }) => Err(BackendError::UnknownTool(request.tool.clone())),
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::Message;

    #[test]
    fn chat_body_shape() {
        let chat = HttpChat::new("http://127.0.0.1:1/v1", Some("m".into()), 1.0, 0).unwrap();
        let mut req = ChatRequest::new(
            "source_a",
            "s",
            vec![Message::system("sys"), Message::user("q").with_audio("file://a.wav")],
        );
        req.sampling.seed = Some(7);
        let body = chat.body(&req);
        assert_eq!(body["model"], "m");
        assert_eq!(body["temperature"], 0.6);
        assert_eq!(body["seed"], 7);
        assert_eq!(body["messages"][0]["content"], "sys");
        assert_eq!(body["messages"][1]["content"][1]["audio_url"]["url"], "file://a.wav");
    }
}
