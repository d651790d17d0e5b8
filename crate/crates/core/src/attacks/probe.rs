//! Few-shot inverse translation through a chat-completion endpoint.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::scoring::{bleu, rouge_l, sentence_bleu};
use super::AttackReport;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct EndpointConfig {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub token: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub max_attempts: u32,
    /// Delay before the first retry; doubled on each further attempt.
    pub backoff: Duration,
    pub max_in_flight: usize,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            token: None,
            model: model.into(),
            timeout: Duration::from_secs(60),
            max_attempts: 3,
            backoff: Duration::from_millis(500),
            max_in_flight: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage {
            role: role.to_owned(),
            content: content.into(),
        }
    }
}

/// Anything that can answer a chat transcript with one message.
pub trait ChatBackend: Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String>;
}

/// Blocking HTTP client for the minimal chat-completion shape.
pub struct HttpChat {
    config: EndpointConfig,
    client: reqwest::blocking::Client,
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

impl HttpChat {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        if config.max_attempts == 0 {
            return Err(Error::argument("max_attempts must be at least 1"));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Transport(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpChat { config, client })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, body: &serde_json::Value) -> std::result::Result<String, Attempt> {
        let mut req = self.client.post(self.url()).json(body);
        if let Some(token) = &self.config.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(format!("request failed: {e}")))?;
        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(Attempt::Fatal(Error::Transport(format!(
                "endpoint rejected credentials ({status})"
            ))));
        }
        if status == reqwest::StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Err(Attempt::Retry(format!("endpoint returned {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(Error::Transport(format!("endpoint returned {status}"))));
        }
        let text = resp
            .text()
            .map_err(|e| Attempt::Retry(format!("reading response failed: {e}")))?;
        parse_completion(&text).map_err(Attempt::Fatal)
    }
}

impl ChatBackend for HttpChat {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String> {
        let body = json!({ "model": self.config.model, "messages": messages });
        let mut delay = self.config.backoff;
        let mut last = String::new();
        for attempt in 1..=self.config.max_attempts {
            match self.attempt(&body) {
                Ok(content) => return Ok(content),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("attempt {attempt}/{} failed: {msg}", self.config.max_attempts);
                    last = msg;
                    if attempt < self.config.max_attempts {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(Error::Transport(format!(
            "giving up after {} attempts: {last}",
            self.config.max_attempts
        )))
    }
}

/// Extract `choices[0].message.content` from a response body.
pub fn parse_completion(body: &str) -> Result<String> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| Error::Protocol(format!("response is not JSON: {e}")))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::Protocol("response has no choices[0].message.content string".into()))
}

/// One aligned evaluation item.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeItem {
    pub alien: String,
    pub plain: String,
}

#[derive(Serialize)]
struct TranscriptLine<'a> {
    shots: usize,
    alien: &'a str,
    guess: &'a str,
    reference: &'a str,
    bleu_sentence: f64,
}

pub const DEFAULT_TEMPLATE: &str =
    "Translate the following text from the unknown language into English. Reply with the translation only.\n\n{alien}";

fn render(template: &str, alien: &str) -> String {
    template.replace("{alien}", alien)
}

fn build_messages(shots: &[ProbeItem], template: &str, alien: &str) -> Vec<ChatMessage> {
    let mut messages = Vec::with_capacity(2 * shots.len() + 1);
    for shot in shots {
        messages.push(ChatMessage::new("user", render(template, &shot.alien)));
        messages.push(ChatMessage::new("assistant", shot.plain.clone()));
    }
    messages.push(ChatMessage::new("user", render(template, alien)));
    messages
}

/// Ask the backend to translate every eval item back to plaintext.
///
/// The first `shots` items of `shot_pool` are prepended as demonstration
/// turns. `template` must contain `{alien}`. At most `max_in_flight` requests
/// are outstanding at once; results are reported in eval order.
pub fn llm_inverse_probe(
    backend: &dyn ChatBackend,
    shots: usize,
    shot_pool: &[ProbeItem],
    eval: &[ProbeItem],
    template: &str,
    transcript: Option<&Path>,
    max_in_flight: usize,
) -> Result<AttackReport> {
    if !template.contains("{alien}") {
        return Err(Error::argument("prompt template must contain {alien}"));
    }
    if shots > shot_pool.len() {
        return Err(Error::argument(format!(
            "{shots} shots requested but only {} examples available",
            shot_pool.len()
        )));
    }
    if eval.is_empty() {
        return Err(Error::argument("evaluation set is empty"));
    }
    let demos = &shot_pool[..shots];
    let workers = max_in_flight.clamp(1, eval.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<String>>>> = Mutex::new((0..eval.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= eval.len() {
                    break;
                }
                let out = backend.complete(&build_messages(demos, template, &eval[i].alien));
                let failed = out.is_err();
                results.lock().expect("result slots")[i] = Some(out);
                if failed {
                    // stop handing out new work
                    next.store(eval.len(), Ordering::Relaxed);
                }
            });
        }
    });
    let mut guesses = Vec::with_capacity(eval.len());
    for slot in results.into_inner().expect("result slots") {
        match slot {
            Some(Ok(g)) => guesses.push(g),
            Some(Err(e)) => return Err(e),
            None => {}
        }
    }
    if guesses.len() != eval.len() {
        return Err(Error::Transport("probe stopped before all items completed".into()));
    }

    let references: Vec<String> = eval.iter().map(|it| it.plain.clone()).collect();
    if let Some(path) = transcript {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (item, guess) in eval.iter().zip(&guesses) {
            let line = TranscriptLine {
                shots,
                alien: &item.alien,
                guess,
                reference: &item.plain,
                bleu_sentence: sentence_bleu(guess, &item.plain),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }

    let mut report = AttackReport::new("probe")
        .param("shots", shots)
        .param("max_in_flight", workers);
    report.bleu = Some(bleu(&guesses, &references)?);
    report.rouge_l = Some(rouge_l(&guesses, &references)?);
    report.evaluated_count = eval.len();
    Ok(report)
}
