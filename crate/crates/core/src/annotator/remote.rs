//! Chat-completion HTTP backend.
//!
//! Wire schema: POST `{base}/chat/completions` with
//! `{"model": ..., "messages": [{"role": "system"|"user", "content": ...}],
//! "temperature": ...}`; the reply text is read from
//! `choices[0].message.content`. `MM_API_KEY` supplies the bearer token and
//! `MM_API_BASE` overrides the configured endpoint base URL.
//!
//! Every call makes at most `max_retries + 1` attempts with exponential
//! backoff (base delay doubling per attempt). Transport failures surface as
//! `BackendUnavailable`; replies that never parse surface as
//! `UnparseableReply`. Requests are idempotent, so callers may fan out.

use super::{AnnotatorError, BackendConfig};
use crate::mbti::Dimension;
use serde::Deserialize;
use serde_json::json;
use std::time::Duration;

/// First backoff delay; attempt `k` waits `BASE * 2^k`.
const BACKOFF_BASE: Duration = Duration::from_millis(250);

pub struct RemoteClient {
    http: reqwest::blocking::Client,
    url: String,
    model_name: String,
    max_retries: usize,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl RemoteClient {
    pub fn new(config: &BackendConfig) -> Result<Self, AnnotatorError> {
        let base = std::env::var("MM_API_BASE").unwrap_or_else(|_| config.endpoint_url.clone());
        let base = base.trim_end_matches('/');
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| AnnotatorError::InvalidConfig(format!("http client: {e}")))?;
        Ok(RemoteClient {
            http,
            url: format!("{base}/chat/completions"),
            model_name: config.model_name.clone(),
            max_retries: config.max_retries,
            api_key: std::env::var("MM_API_KEY").ok(),
        })
    }

    /// One request, no retries. Transport and HTTP-status failures are
    /// `BackendUnavailable` with a single attempt recorded.
    fn request(&self, system: &str, user: &str, temperature: f64) -> Result<String, String> {
        let body = json!({
            "model": self.model_name,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": temperature,
        });
        let mut req = self.http.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| format!("request failed: {e}"))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("server returned {status}"));
        }
        let reply: ChatReply = resp.json().map_err(|e| format!("bad reply body: {e}"))?;
        reply
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .ok_or_else(|| "reply had no choices".to_string())
    }

    /// Requests until `parse` accepts the reply, retrying both transport
    /// failures and unparseable content. Returns the value and the number
    /// of attempts used.
    pub fn call_parsed<T>(
        &self,
        system: &str,
        user: &str,
        temperature: f64,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<(T, u32), AnnotatorError> {
        let mut last_transport: Option<String> = None;
        let mut last_reply: Option<String> = None;
        let total = self.max_retries as u32 + 1;
        for attempt in 0..total {
            if attempt > 0 {
                std::thread::sleep(BACKOFF_BASE * 2u32.pow(attempt - 1));
            }
            match self.request(system, user, temperature) {
                Ok(reply) => match parse(&reply) {
                    Some(v) => return Ok((v, attempt + 1)),
                    None => {
                        last_reply = Some(reply);
                        last_transport = None;
                    }
                },
                Err(reason) => {
                    last_transport = Some(reason);
                }
            }
        }
        match (last_transport, last_reply) {
            (Some(reason), _) => Err(AnnotatorError::BackendUnavailable {
                attempts: total,
                reason,
            }),
            (None, Some(reply)) => Err(AnnotatorError::UnparseableReply {
                attempts: total,
                last_reply: reply,
            }),
            (None, None) => unreachable!("loop ran at least once"),
        }
    }
}

/// Parses a classification reply: the reply must contain exactly one
/// dimension word.
pub fn parse_dimension_reply(reply: &str) -> Option<Dimension> {
    let lower = reply.to_lowercase();
    let mut found = None;
    for d in Dimension::ALL {
        if lower.contains(d.as_str()) {
            if found.is_some() {
                return None;
            }
            found = Some(d);
        }
    }
    found
}

/// Parses a pair reply: two non-empty, distinct responses separated by a
/// line containing only `---`.
pub fn parse_pair_reply(reply: &str) -> Option<(String, String)> {
    let mut parts = reply.splitn(2, "\n---");
    let first = parts.next()?.trim();
    let second = parts.next()?.trim_start_matches(['-']).trim();
    if first.is_empty() || second.is_empty() || first == second {
        return None;
    }
    Some((first.to_string(), second.to_string()))
}

/// Parses a self-awareness reply of the form `Question: ...\nAnswer: ...`.
pub fn parse_qa_reply(reply: &str) -> Option<(String, String)> {
    let q_start = reply.find("Question:")?;
    let a_start = reply.find("Answer:")?;
    if a_start <= q_start {
        return None;
    }
    let question = reply[q_start + "Question:".len()..a_start].trim();
    let answer = reply[a_start + "Answer:".len()..].trim();
    if question.is_empty() || answer.is_empty() {
        return None;
    }
    Some((question.to_string(), answer.to_string()))
}
