//! HTTP clients against a throwaway local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use fw_core::backends::{BackendError, ChatBackend, ChatRequest, HttpChat, HttpTools, Message, Sampling, ToolBackend};
use fw_core::tools::ToolRequest;

/// Serves `replies` in order (the last one repeats), one per connection.
/// Returns the base URL, the hit counter and the received bodies.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>, Arc<std::sync::Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(std::sync::Mutex::new(Vec::new()));
    let (h, b) = (hits.clone(), bodies.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0; len];
            let _ = reader.read_exact(&mut body);
            b.lock().unwrap().push(String::from_utf8_lossy(&body).into_owned());
            let n = h.fetch_add(1, Ordering::SeqCst);
            let (status, text) = &replies[n.min(replies.len() - 1)];
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{text}",
                text.len()
            );
        }
    });
    (url, hits, bodies)
}

fn request() -> ChatRequest {
    ChatRequest::new("judge", "s1", vec![Message::system("sys"), Message::user("hello").with_audio("file:///a.wav")])
        .with_sampling(Sampling { temperature: 0.6, seed: Some(7) })
}

fn completion(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

#[test]
fn server_errors_are_retried_up_to_the_limit() {
    let (url, hits, _) = serve(vec![(500, "{}".into())]);
    let chat = HttpChat::new(&url, None, 5.0, 2).unwrap();
    let err = chat.complete(&request()).unwrap_err();
    assert_eq!(hits.load(Ordering::SeqCst), 3);
    assert!(matches!(err, BackendError::Http { status: 500, attempts: 3, .. }), "{err:?}");
}

#[test]
fn a_retry_can_succeed() {
    let (url, hits, bodies) = serve(vec![(503, "{}".into()), (200, completion("ANSWER: B"))]);
    let chat = HttpChat::new(&url, Some("m1".into()), 5.0, 2).unwrap();
    assert_eq!(chat.complete(&request()).unwrap().text, "ANSWER: B");
    assert_eq!(hits.load(Ordering::SeqCst), 2);
    let body: serde_json::Value = serde_json::from_str(&bodies.lock().unwrap()[1]).unwrap();
    assert_eq!(body["model"], "m1");
    assert_eq!(body["seed"], 7);
    assert_eq!(body["messages"][1]["content"][1]["audio_url"]["url"], "file:///a.wav");
}

#[test]
fn client_errors_are_not_retried() {
    let (url, hits, _) = serve(vec![(400, "{\"error\": \"bad\"}".into())]);
    let chat = HttpChat::new(&url, None, 5.0, 2).unwrap();
    assert!(matches!(chat.complete(&request()), Err(BackendError::Http { status: 400, attempts: 1, .. })));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn malformed_replies_are_reported() {
    let (url, _, _) = serve(vec![(200, "{\"choices\": []}".into())]);
    let chat = HttpChat::new(&url, None, 5.0, 0).unwrap();
    assert!(matches!(chat.complete(&request()), Err(BackendError::Malformed(_))));
}

#[test]
fn tool_client_posts_the_request() {
    let reply = serde_json::json!({"summary": "2 speakers", "fields": {"speaker_count": 2}, "confidence": 0.8}).to_string();
    let (url, _, bodies) = serve(vec![(200, reply)]);
    let tools = HttpTools::new(&url, 5.0, 1).unwrap();
    let req = ToolRequest::new("speaker count", "a.wav");
    let out = tools.invoke(&req).unwrap();
    assert_eq!(out.summary, "2 speakers");
    assert_eq!(out.confidence, 0.8);
    let body: serde_json::Value = serde_json::from_str(&bodies.lock().unwrap()[0]).unwrap();
    assert_eq!(body["tool"], "speaker count");
    assert!(body["time_range"].is_null());
}

#[test]
fn unreachable_hosts_fail_after_retries() {
    // bind then drop to get a closed port
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let chat = HttpChat::new(&format!("http://127.0.0.1:{port}/"), None, 1.0, 1).unwrap();
    assert!(matches!(chat.complete(&request()), Err(BackendError::Transport(_) | BackendError::Timeout { .. })));
}
