use std::fs::File;
use std::io::Write as _;
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{GatewayError, TransportError};

pub const ENDPOINT_ENV: &str = "MAGENT_ENDPOINT";
pub const API_KEY_ENV: &str = "MAGENT_API_KEY";
pub const MODEL_ENV: &str = "MAGENT_MODEL";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// Evidence attached to the last user message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Attachment {
    /// Already-encoded image bytes with their media type.
    Image { media_type: String, base64: String },
    /// A URL the backend fetches itself.
    Url { url: String },
}

impl Attachment {
    pub fn image_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref();
        let media_type = match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("png") => "image/png",
            Some("webp") => "image/webp",
            _ => "image/jpeg",
        };
        Ok(Attachment::Image {
            media_type: media_type.to_string(),
            base64: base64::engine::general_purpose::STANDARD.encode(std::fs::read(path)?),
        })
    }

    fn to_part(&self) -> Value {
        let url = match self {
            Attachment::Image { media_type, base64 } => format!("data:{media_type};base64,{base64}"),
            Attachment::Url { url } => url.clone(),
        };
        json!({ "type": "image_url", "image_url": { "url": url } })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub endpoint: String,
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<Attachment>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.endpoint.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("endpoint is empty".into()));
        }
        if self.timeout.is_zero() {
            return Err(GatewayError::InvalidRequest("timeout must be positive".into()));
        }
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        Ok(())
    }

    /// The chat-completions request body.
    pub fn wire_body(&self) -> Value {
        let last = self.messages.len() - 1;
        let messages: Vec<Value> = self
            .messages
            .iter()
            .enumerate()
            .map(|(i, m)| {
                if i == last && !self.attachments.is_empty() {
                    let mut parts = vec![json!({ "type": "text", "text": m.content })];
                    parts.extend(self.attachments.iter().map(Attachment::to_part));
                    json!({ "role": m.role, "content": parts })
                } else {
                    json!({ "role": m.role, "content": m.content })
                }
            })
            .collect();
        json!({
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub content: String,
    pub latency_ms: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Attempts made, including the successful one.
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout: Duration,
    /// Extra attempts after a transient failure.
    pub retries: u32,
    pub backoff: Duration,
    pub max_in_flight: usize,
    pub max_tokens: u32,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            timeout: Duration::from_secs(60),
            retries: 1,
            backoff: Duration::from_millis(500),
            max_in_flight: 8,
            max_tokens: 512,
        }
    }
}

impl ClientConfig {
    /// Defaults overridden by the endpoint and model environment variables.
    pub fn from_env() -> Self {
        let mut config = Self::default();
        if let Ok(endpoint) = std::env::var(ENDPOINT_ENV) {
            config.endpoint = endpoint;
        }
        if let Ok(model) = std::env::var(MODEL_ENV) {
            config.model = model;
        }
        config
    }
}

struct InFlight {
    count: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.count.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.count.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Blocking chat-completions client, shareable across threads.
pub struct ChatClient {
    config: ClientConfig,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
    in_flight: InFlight,
    audit: Option<Mutex<File>>,
}

impl ChatClient {
    pub fn new(config: ClientConfig) -> Result<Self, GatewayError> {
        if config.max_in_flight == 0 {
            return Err(GatewayError::InvalidRequest("max_in_flight must be at least 1".into()));
        }
        let http = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        Ok(Self {
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            in_flight: InFlight {
                count: Mutex::new(0),
                freed: Condvar::new(),
                cap: config.max_in_flight,
            },
            config,
            http,
            audit: None,
        })
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    /// Mirrors every request/response pair to `path` as JSON lines.
    pub fn with_audit_log(mut self, path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let file = File::options()
            .create(true)
            .append(true)
            .open(path.as_ref())
            .map_err(|e| GatewayError::Asset {
                path: path.as_ref().to_path_buf(),
                reason: e.to_string(),
            })?;
        self.audit = Some(Mutex::new(file));
        Ok(self)
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    /// A single-message request using this client's endpoint and model.
    pub fn request(&self, prompt: String, temperature: f64) -> ChatRequest {
        ChatRequest {
            endpoint: self.config.endpoint.clone(),
            model: self.config.model.clone(),
            messages: vec![ChatMessage::user(prompt)],
            temperature,
            max_tokens: self.config.max_tokens,
            timeout: self.config.timeout,
            attachments: Vec::new(),
        }
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<CompletionResponse, GatewayError> {
        request.validate()?;
        let body = request.wire_body();
        let mut attempt = 0;
        loop {
            attempt += 1;
            let started = Instant::now();
            let outcome = {
                let _slot = self.in_flight.acquire();
                self.send_once(request, &body)
            };
            let latency_ms = started.elapsed().as_millis() as u64;
            self.audit(&body, &outcome, latency_ms);
            match outcome {
                Ok((content, prompt_tokens, completion_tokens)) => {
                    return Ok(CompletionResponse {
                        content,
                        latency_ms,
                        prompt_tokens,
                        completion_tokens,
                        attempts: attempt,
                    })
                }
                Err(err) if err.is_transient() && attempt <= self.config.retries => {
                    tracing::debug!(attempt, %err, "retrying chat completion");
                    std::thread::sleep(self.config.backoff * attempt);
                }
                Err(err) => return Err(err.into()),
            }
        }
    }

    fn send_once(
        &self,
        request: &ChatRequest,
        body: &Value,
    ) -> Result<(String, u64, u64), TransportError> {
        let mut builder = self
            .http
            .post(&request.endpoint)
            .timeout(request.timeout)
            .json(body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout(request.timeout)
            } else {
                TransportError::Connect(e.to_string())
            }
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout(request.timeout)
            } else {
                TransportError::Connect(e.to_string())
            }
        })?;
        if !status.is_success() {
            return Err(TransportError::Status {
                code: status.as_u16(),
                body: text.chars().take(512).collect(),
            });
        }
        parse_envelope(&text)
    }

    fn audit(
        &self,
        request: &Value,
        outcome: &Result<(String, u64, u64), TransportError>,
        latency_ms: u64,
    ) {
        let Some(file) = &self.audit else { return };
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or_default();
        let record = match outcome {
            Ok((content, p, c)) => json!({
                "ts_ms": ts, "latency_ms": latency_ms, "request": request,
                "response": content, "prompt_tokens": p, "completion_tokens": c,
            }),
            Err(e) => json!({
                "ts_ms": ts, "latency_ms": latency_ms, "request": request, "error": e.to_string(),
            }),
        };
        let mut file = file.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(err) = writeln!(file, "{record}") {
            tracing::warn!(%err, "audit log write failed");
        }
    }
}

/// Content and token counts from a chat-completions response body.
pub fn parse_envelope(text: &str) -> Result<(String, u64, u64), TransportError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| TransportError::Envelope(e.to_string()))?;
    let content = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| TransportError::Envelope("missing choices[0].message.content".into()))?;
    let tokens = |key: &str| {
        value
            .pointer(&format!("/usage/{key}"))
            .and_then(Value::as_u64)
            .unwrap_or(0)
    };
    Ok((
        content.to_string(),
        tokens("prompt_tokens"),
        tokens("completion_tokens"),
    ))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    pub(crate) fn envelope(content: &str) -> String {
        json!({
            "choices": [{ "message": { "role": "assistant", "content": content } }],
            "usage": { "prompt_tokens": 12, "completion_tokens": 3 },
        })
        .to_string()
    }

    /// Serves `responses` in order (the last one repeats), one per connection.
    /// Returns the endpoint URL and a counter of requests served.
    pub(crate) fn stub_server(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let served = Arc::new(AtomicUsize::new(0));
        let counter = served.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap_or(0);
                    }
                }
                let mut body = vec![0u8; length];
                let _ = reader.read_exact(&mut body);
                let i = counter.fetch_add(1, Ordering::SeqCst);
                let (code, payload) = &responses[i.min(responses.len() - 1)];
                let reply = format!(
                    "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        (format!("http://{addr}/v1/chat/completions"), served)
    }

    pub(crate) fn client_for(endpoint: &str) -> ChatClient {
        ChatClient::new(ClientConfig {
            endpoint: endpoint.to_string(),
            timeout: Duration::from_secs(5),
            backoff: Duration::from_millis(10),
            ..ClientConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn canned_content_is_returned_verbatim() {
        let canned = r#"{"action": "exploit", "reasoning": "good list"}"#;
        let (url, _) = stub_server(vec![(200, envelope(canned))]);
        let client = client_for(&url);
        let out = client.complete(&client.request("hi".into(), 0.0)).unwrap();
        assert_eq!(out.content, canned);
        assert_eq!((out.prompt_tokens, out.completion_tokens, out.attempts), (12, 3, 1));
    }

    #[test]
    fn server_error_is_retried_once() {
        let (url, served) = stub_server(vec![(500, "{}".into()), (200, envelope("matched"))]);
        let client = client_for(&url);
        let out = client.complete(&client.request("hi".into(), 0.0)).unwrap();
        assert_eq!(out.content, "matched");
        assert_eq!(out.attempts, 2);
        assert_eq!(served.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn persistent_failure_surfaces_status() {
        let (url, served) = stub_server(vec![(503, "busy".into())]);
        let client = client_for(&url);
        let err = client.complete(&client.request("hi".into(), 0.0)).unwrap_err();
        assert!(matches!(
            err,
            GatewayError::Transport(TransportError::Status { code: 503, .. })
        ));
        assert_eq!(served.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, served) = stub_server(vec![(400, "bad".into())]);
        let client = client_for(&url);
        assert!(client.complete(&client.request("hi".into(), 0.0)).is_err());
        assert_eq!(served.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn unreachable_host_fails_within_timeout() {
        // Bind then drop to get a port nothing listens on.
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let client = ChatClient::new(ClientConfig {
            endpoint: format!("http://127.0.0.1:{port}/v1/chat/completions"),
            timeout: Duration::from_secs(2),
            backoff: Duration::from_millis(10),
            ..ClientConfig::default()
        })
        .unwrap();
        let started = Instant::now();
        let err = client.complete(&client.request("hi".into(), 0.0)).unwrap_err();
        assert!(matches!(err, GatewayError::Transport(_)), "{err}");
        assert!(started.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn malformed_envelope_is_a_transport_error() {
        let (url, _) = stub_server(vec![(200, r#"{"choices": []}"#.into())]);
        let client = client_for(&url);
        assert!(matches!(
            client.complete(&client.request("hi".into(), 0.0)),
            Err(GatewayError::Transport(TransportError::Envelope(_)))
        ));
    }

    #[test]
    fn attachments_become_content_parts() {
        let mut req = client_for("http://x").request("judge".into(), 0.0);
        req.attachments.push(Attachment::Image {
            media_type: "image/jpeg".into(),
            base64: "AAAA".into(),
        });
        let body = req.wire_body();
        assert_eq!(body["messages"][0]["content"][0]["text"], "judge");
        assert_eq!(
            body["messages"][0]["content"][1]["image_url"]["url"],
            "data:image/jpeg;base64,AAAA"
        );
    }

    #[test]
    fn audit_log_records_each_attempt() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("audit.jsonl");
        let (url, _) = stub_server(vec![(500, "{}".into()), (200, envelope("ok"))]);
        let client = client_for(&url).with_audit_log(&log).unwrap();
        client.complete(&client.request("hi".into(), 0.0)).unwrap();
        let text = std::fs::read_to_string(&log).unwrap();
        let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].get("error").is_some());
        assert_eq!(lines[1]["response"], "ok");
    }

    #[test]
    fn invalid_requests_are_rejected_before_sending() {
        let client = client_for("http://x");
        let mut req = client.request("hi".into(), 0.0);
        req.timeout = Duration::ZERO;
        assert!(matches!(client.complete(&req), Err(GatewayError::InvalidRequest(_))));
        req.timeout = Duration::from_secs(1);
        req.endpoint.clear();
        assert!(matches!(client.complete(&req), Err(GatewayError::InvalidRequest(_))));
    }
}
