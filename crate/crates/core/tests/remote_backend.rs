//! Remote-backend contract tests against a local HTTP/1.1 stub.
//!
//! The stub accepts one request per connection (it replies with
//! `Connection: close`), records what it saw, and serves scripted replies.

use persona_core::annotator::{Annotator, AnnotatorError, BackendConfig};
use persona_core::mbti::Dimension;
use persona_core::prompt::TemplateSet;
use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

struct Recorded {
    path: String,
    auth: Option<String>,
    body: serde_json::Value,
}

struct Stub {
    url: String,
    requests: Arc<Mutex<Vec<Recorded>>>,
    hits: Arc<AtomicUsize>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl Stub {
    /// Serves scripted responses; after the script runs out, the last entry
    /// repeats. Entries are (status line, body).
    fn serve(script: Vec<(&'static str, String)>) -> Stub {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let requests: Arc<Mutex<Vec<Recorded>>> = Arc::default();
        let hits: Arc<AtomicUsize> = Arc::default();
        let reqs = requests.clone();
        let hit_count = hits.clone();
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let Some((path, auth, body)) = read_request(&mut stream) else {
                    continue;
                };
                if path == "/__shutdown" {
                    break;
                }
                let n = hit_count.fetch_add(1, Ordering::SeqCst);
                reqs.lock().unwrap().push(Recorded {
                    path,
                    auth,
                    body: serde_json::from_str(&body).unwrap_or(serde_json::Value::Null),
                });
                let (status, reply) = &script[n.min(script.len() - 1)];
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                    reply.len()
                );
            }
        });
        Stub {
            url: format!("http://{addr}"),
            requests,
            hits,
            handle: Some(handle),
        }
    }

    fn config(&self, max_retries: usize) -> BackendConfig {
        BackendConfig {
            max_retries,
            max_parallel: 2,
            timeout_secs: 5.0,
            ..BackendConfig::remote(&self.url, "stub-model")
        }
    }
}

impl Drop for Stub {
    fn drop(&mut self) {
        // Unblock the accept loop.
        let _ = std::net::TcpStream::connect(self.url.trim_start_matches("http://")).map(
            |mut s| {
                let _ = s.write_all(b"GET /__shutdown HTTP/1.1\r\ncontent-length: 0\r\n\r\n");
            },
        );
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn read_request(stream: &mut std::net::TcpStream) -> Option<(String, Option<String>, String)> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end = loop {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            return None;
        }
        buf.extend_from_slice(&chunk[..n]);
        if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
            break pos + 4;
        }
        if buf.len() > 1 << 20 {
            return None;
        }
    };
    let head = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let path = head.split_whitespace().nth(1)?.to_string();
    let mut auth = None;
    let mut content_length = 0usize;
    for line in head.lines().skip(1) {
        let lower = line.to_ascii_lowercase();
        if let Some(rest) = lower.strip_prefix("authorization:") {
            let _ = rest;
            auth = Some(line.split_once(':')?.1.trim().to_string());
        }
        if let Some(rest) = lower.strip_prefix("content-length:") {
            content_length = rest.trim().parse().ok()?;
        }
    }
    while buf.len() < header_end + content_length {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            break;
        }
        buf.extend_from_slice(&chunk[..n]);
    }
    let body = String::from_utf8_lossy(&buf[header_end..]).to_string();
    Some((path, auth, body))
}

fn chat_reply(content: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}}]
    })
    .to_string()
}

#[test]
fn remote_classify_parses_and_follows_the_wire_schema() {
    std::env::set_var("MM_API_KEY", "test-key-123");
    let stub = Stub::serve(vec![("200 OK", chat_reply("decision"))]);
    let annotator = Annotator::new(stub.config(1), TemplateSet::embedded()).unwrap();
    let d = annotator.classify_dimension("Pick between two offers.").unwrap();
    assert_eq!(d, Dimension::Decision);

    let recorded = stub.requests.lock().unwrap();
    assert_eq!(recorded.len(), 1);
    let r = &recorded[0];
    assert_eq!(r.path, "/chat/completions");
    assert_eq!(r.auth.as_deref(), Some("Bearer test-key-123"));
    assert_eq!(r.body["model"], "stub-model");
    let messages = r.body["messages"].as_array().unwrap();
    assert_eq!(messages.len(), 2);
    assert_eq!(messages[0]["role"], "system");
    assert_eq!(messages[1]["role"], "user");
    assert!(messages[1]["content"]
        .as_str()
        .unwrap()
        .contains("Pick between two offers."));
    assert!(r.body["temperature"].is_number());
}

#[test]
fn remote_retries_transient_failures_with_backoff() {
    let stub = Stub::serve(vec![
        ("500 Internal Server Error", "{}".to_string()),
        ("200 OK", chat_reply("energy")),
    ]);
    let annotator = Annotator::new(stub.config(2), TemplateSet::embedded()).unwrap();
    let started = std::time::Instant::now();
    let d = annotator.classify_dimension("How do you recharge?").unwrap();
    assert_eq!(d, Dimension::Energy);
    assert_eq!(stub.hits.load(Ordering::SeqCst), 2);
    // One backoff interval (250ms base) must have elapsed.
    assert!(started.elapsed().as_millis() >= 250);
}

#[test]
fn remote_gives_up_after_max_retries_plus_one() {
    let stub = Stub::serve(vec![("500 Internal Server Error", "{}".to_string())]);
    let annotator = Annotator::new(stub.config(2), TemplateSet::embedded()).unwrap();
    let err = annotator.classify_dimension("x").expect_err("must fail");
    match err {
        AnnotatorError::BackendUnavailable { attempts, .. } => assert_eq!(attempts, 3),
        other => panic!("expected BackendUnavailable, got {other}"),
    }
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn unparseable_replies_are_flagged_not_guessed() {
    // Every reply is nonsense: the instruction must be skipped and flagged
    // after max_retries + 1 attempts, never imputed.
    let stub = Stub::serve(vec![("200 OK", chat_reply("banana"))]);
    let annotator = Annotator::new(stub.config(1), TemplateSet::embedded()).unwrap();
    let outcomes = annotator
        .annotate_instructions(&["What causes thunder?".to_string()])
        .unwrap();
    assert_eq!(outcomes.len(), 1);
    assert!(outcomes[0].flagged_malformed);
    assert!(outcomes[0].payload.is_none());
    assert_eq!(outcomes[0].attempts, 2);
    assert_eq!(stub.hits.load(Ordering::SeqCst), 2);
}

#[test]
fn remote_pair_generation_splits_on_separator() {
    let stub = Stub::serve(vec![(
        "200 OK",
        chat_reply("<mk_T> I weigh the logic.\n---\n<mk_F> I seek harmony."),
    )]);
    let annotator = Annotator::new(stub.config(1), TemplateSet::embedded()).unwrap();
    let (first, second) = annotator
        .generate_attitude_pair("Settle a disagreement.", Dimension::Decision)
        .unwrap();
    assert_eq!(first, "<mk_T> I weigh the logic.");
    assert_eq!(second, "<mk_F> I seek harmony.");
}

#[test]
fn remote_awareness_parses_question_answer_format() {
    let stub = Stub::serve(vec![(
        "200 OK",
        chat_reply("Question: How do you decide?\nAnswer: <mk_F> I choose with empathy."),
    )]);
    let annotator = Annotator::new(stub.config(1), TemplateSet::embedded()).unwrap();
    let infp = persona_core::mbti::PersonalityType::parse("INFP").unwrap();
    let qa = annotator.generate_self_awareness_qa(infp, 2).unwrap();
    assert_eq!(qa.len(), 2);
    assert_eq!(qa[0].0, "How do you decide?");
    assert!(qa[0].1.starts_with("<mk_F>"));
}
