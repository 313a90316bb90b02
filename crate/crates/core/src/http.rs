//! Minimal blocking HTTP transport used by the GitHub and chat-completion
//! clients, plus a recorded-fixture implementation for offline tests.
//!
//! A fixture file is a JSON array of `{"request": …, "response": …}` pairs.
//! Requests are matched by method and URL; when the same request appears
//! several times, the recorded responses are served in order and the last
//! one repeats once exhausted.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("connection error: {0}")]
    Connection(String),
    #[error("request timed out")]
    Timeout,
    #[error("no recorded response for {method} {url}")]
    Unmatched { method: Method, url: String },
    #[error("fixture error: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Get => "GET",
            Method::Post => "POST",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpRequest {
    pub method: Method,
    pub url: String,
    #[serde(default, skip_serializing)]
    pub headers: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
}

impl HttpRequest {
    pub fn get(url: impl Into<String>) -> Self {
        HttpRequest {
            method: Method::Get,
            url: url.into(),
            headers: Vec::new(),
            body: None,
        }
    }

    pub fn post(url: impl Into<String>, body: impl Into<String>) -> Self {
        HttpRequest {
            method: Method::Post,
            url: url.into(),
            headers: Vec::new(),
            body: Some(body.into()),
        }
    }

    pub fn header(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    /// Header names are lower-cased.
    pub headers: BTreeMap<String, String>,
    pub body: String,
}

impl HttpResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.get(&name.to_ascii_lowercase()).map(String::as_str)
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

pub trait HttpTransport: Send + Sync {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

impl<T: HttpTransport + ?Sized> HttpTransport for std::sync::Arc<T> {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        (**self).send(request)
    }
}

/// Live transport backed by `ureq`.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        UreqTransport {
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

impl HttpTransport for UreqTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let result = match request.method {
            Method::Get => {
                let mut builder = self.agent.get(&request.url);
                for (k, v) in &request.headers {
                    builder = builder.header(k, v);
                }
                builder.call()
            }
            Method::Post => {
                let mut builder = self.agent.post(&request.url);
                for (k, v) in &request.headers {
                    builder = builder.header(k, v);
                }
                builder.send(request.body.clone().unwrap_or_default())
            }
        };
        let mut response = result.map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            other => TransportError::Connection(other.to_string()),
        })?;
        let headers = response
            .headers()
            .iter()
            .filter_map(|(k, v)| {
                v.to_str()
                    .ok()
                    .map(|v| (k.as_str().to_ascii_lowercase(), v.to_string()))
            })
            .collect();
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Connection(e.to_string()))?;
        Ok(HttpResponse { status, headers, body })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordedResponse {
    pub status: u16,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    /// Either a JSON document or a raw string body.
    #[serde(default)]
    pub body: serde_json::Value,
}

impl RecordedResponse {
    fn to_response(&self) -> HttpResponse {
        let body = match &self.body {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Null => String::new(),
            other => other.to_string(),
        };
        HttpResponse {
            status: self.status,
            headers: self
                .headers
                .iter()
                .map(|(k, v)| (k.to_ascii_lowercase(), v.clone()))
                .collect(),
            body,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordedExchange {
    pub request: HttpRequest,
    pub response: RecordedResponse,
}

/// Serves responses from a recorded transcript.
pub struct RecordedTransport {
    exchanges: Vec<RecordedExchange>,
    cursors: Mutex<HashMap<(Method, String), usize>>,
    log: Mutex<Vec<HttpRequest>>,
}

impl RecordedTransport {
    pub fn new(exchanges: Vec<RecordedExchange>) -> Self {
        RecordedTransport {
            exchanges,
            cursors: Mutex::new(HashMap::new()),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, TransportError> {
        let exchanges: Vec<RecordedExchange> =
            serde_json::from_str(text).map_err(|e| TransportError::Fixture(e.to_string()))?;
        Ok(Self::new(exchanges))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, TransportError> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| TransportError::Fixture(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    /// Requests served so far, in order.
    pub fn requests(&self) -> Vec<HttpRequest> {
        self.log.lock().unwrap().clone()
    }
}

impl HttpTransport for RecordedTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        self.log.lock().unwrap().push(request.clone());
        let matching: Vec<&RecordedExchange> = self
            .exchanges
            .iter()
            .filter(|x| x.request.method == request.method && x.request.url == request.url)
            .collect();
        if matching.is_empty() {
            return Err(TransportError::Unmatched {
                method: request.method,
                url: request.url.clone(),
            });
        }
        let mut cursors = self.cursors.lock().unwrap();
        let cursor = cursors.entry((request.method, request.url.clone())).or_insert(0);
        let index = (*cursor).min(matching.len() - 1);
        *cursor += 1;
        Ok(matching[index].response.to_response())
    }
}

/// Wraps a live transport and keeps every exchange so it can be saved as a
/// fixture.
pub struct RecordingTransport<T> {
    inner: T,
    recorded: Mutex<Vec<RecordedExchange>>,
}

impl<T: HttpTransport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        RecordingTransport {
            inner,
            recorded: Mutex::new(Vec::new()),
        }
    }

    pub fn exchanges(&self) -> Vec<RecordedExchange> {
        self.recorded.lock().unwrap().clone()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(&self.exchanges())?;
        fs::write(path, json)
    }
}

impl<T: HttpTransport> HttpTransport for RecordingTransport<T> {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let response = self.inner.send(request)?;
        let body =
            serde_json::from_str(&response.body).unwrap_or_else(|_| serde_json::Value::String(response.body.clone()));
        self.recorded.lock().unwrap().push(RecordedExchange {
            request: request.clone(),
            response: RecordedResponse {
                status: response.status,
                headers: response.headers.clone(),
                body,
            },
        });
        Ok(response)
    }
}
