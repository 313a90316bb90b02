//! Chat-completion transports: an OpenAI-compatible HTTP client and scripted
//! stubs for offline runs.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{HttpRequest, HttpTransport};

pub const API_KEY_ENV: &str = "LLM_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChatError {
    /// Worth retrying: timeouts, connection resets, 429 and 5xx.
    #[error("retryable: {0}")]
    Retryable(String),
    #[error("{0}")]
    Fatal(String),
}

impl ChatError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ChatError::Retryable(_))
    }
}

pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError>;
}

/// Client for any endpoint speaking the chat-completions JSON convention.
pub struct OpenAiChat<T> {
    http: T,
    endpoint: String,
    api_key: Option<String>,
}

impl<T: HttpTransport> OpenAiChat<T> {
    /// `endpoint` is the full chat-completions URL, e.g.
    /// `https://api.openai.com/v1/chat/completions`.
    pub fn new(http: T, endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        OpenAiChat {
            http,
            endpoint: endpoint.into(),
            api_key,
        }
    }

    pub fn from_env(http: T, endpoint: impl Into<String>) -> Self {
        Self::new(http, endpoint, std::env::var(API_KEY_ENV).ok())
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

impl<T: HttpTransport> ChatTransport for OpenAiChat<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        let body = serde_json::to_string(request).expect("chat request serializes");
        let mut http = HttpRequest::post(&self.endpoint, body).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            http = http.header("Authorization", format!("Bearer {key}"));
        }
        let response = self.http.send(&http).map_err(|e| ChatError::Retryable(e.to_string()))?;
        match response.status {
            200..=299 => {}
            429 | 500..=599 => {
                return Err(ChatError::Retryable(format!("status {}", response.status)));
            }
            status => {
                let snippet: String = response.body.chars().take(200).collect();
                return Err(ChatError::Fatal(format!("status {status}: {snippet}")));
            }
        }
        let parsed: CompletionResponse = serde_json::from_str(&response.body)
            .map_err(|e| ChatError::Fatal(format!("malformed completion response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content.unwrap_or_default())
            .ok_or_else(|| ChatError::Fatal("completion response has no choices".into()))
    }
}

/// One scripted reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    Text(String),
    Delayed { text: String, delay_ms: u64 },
    Error { error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    /// Substring identifying the contribution in the first user message.
    #[serde(rename = "match")]
    pub pattern: String,
    pub replies: Vec<ScriptedReply>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    #[serde(default)]
    pub scripts: Vec<Script>,
    /// Reply for requests matching no script.
    #[serde(default)]
    pub default: Option<ScriptedReply>,
}

/// Stub model replaying a transcript. Replies of each script are served in
/// order and the last one repeats.
pub struct ScriptedChat {
    transcript: Transcript,
    cursors: Mutex<HashMap<usize, usize>>,
    calls: AtomicUsize,
}

impl ScriptedChat {
    pub fn new(transcript: Transcript) -> Self {
        ScriptedChat {
            transcript,
            cursors: Mutex::new(HashMap::new()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, String> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let transcript = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(Self::new(transcript))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

fn contribution_text(request: &ChatRequest) -> &str {
    request
        .messages
        .iter()
        .find(|m| m.role == Role::User)
        .map(|m| m.content.as_str())
        .unwrap_or("")
}

fn serve(reply: &ScriptedReply) -> Result<String, ChatError> {
    match reply {
        ScriptedReply::Text(t) => Ok(t.clone()),
        ScriptedReply::Delayed { text, delay_ms } => {
            std::thread::sleep(Duration::from_millis(*delay_ms));
            Ok(text.clone())
        }
        ScriptedReply::Error { error } => Err(ChatError::Retryable(error.clone())),
    }
}

impl ChatTransport for ScriptedChat {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = contribution_text(request);
        let found = self
            .transcript
            .scripts
            .iter()
            .enumerate()
            .find(|(_, s)| text.contains(&s.pattern));
        let reply = match found {
            Some((index, script)) if !script.replies.is_empty() => {
                let mut cursors = self.cursors.lock().unwrap();
                let cursor = cursors.entry(index).or_insert(0);
                let reply = script.replies[(*cursor).min(script.replies.len() - 1)].clone();
                *cursor += 1;
                reply
            }
            _ => self
                .transcript
                .default
                .clone()
                .ok_or_else(|| ChatError::Fatal("no scripted reply for request".into()))?,
        };
        serve(&reply)
    }
}

/// Stub model answering through a closure.
pub struct FnChat<F> {
    reply: F,
    calls: AtomicUsize,
}

impl<F> FnChat<F>
where
    F: Fn(&ChatRequest) -> Result<String, ChatError> + Send + Sync,
{
    pub fn new(reply: F) -> Self {
        FnChat {
            reply,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F> ChatTransport for FnChat<F>
where
    F: Fn(&ChatRequest) -> Result<String, ChatError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.reply)(request)
    }
}
