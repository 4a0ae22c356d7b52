//! Pluggable chat-completion clients and the HTTP implementation.
//!
//! The wire protocol is the common chat-completions shape: POST
//! `{base}/v1/chat/completions` with `{model, messages, temperature, seed}`,
//! bearer-token auth, answer in `choices[0].message.content`. Any compatible
//! endpoint works, including the local mock server.

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling settings passed through to the model on every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    /// Base seed; each slot derives its own stream from (seed, slot).
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl SamplingParams {
    /// Per-slot seed so repeated generations differ yet replay exactly.
    pub fn slot_seed(&self, slot: usize) -> u64 {
        // SplitMix64 finalizer over (seed, slot).
        let mut z = self
            .seed
            .wrapping_add((slot as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
            .wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

/// A source of chat completions.
///
/// Implementations must be shareable across threads, never mutate prompts,
/// and (for deterministic backends) return identical text for identical
/// (prompt, params, slot) triples.
pub trait ModelClient: Send + Sync {
    fn name(&self) -> &str;

    /// One completion for the serialized prompt. Transport-level retry is
    /// the implementation's responsibility; an `Err` means the slot is
    /// lost for good.
    fn generate(&self, prompt_text: &str, params: &SamplingParams, slot: usize) -> Result<String>;

    /// Upper bound on concurrent in-flight requests.
    fn max_in_flight(&self) -> usize {
        4
    }
}

/// What kind of transport event an audit entry records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    Request,
    Response,
    Retry,
    TransportError,
}

/// One transport event. Replay runs must produce none of these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub kind: AuditKind,
    pub timestamp: chrono::DateTime<chrono::Utc>,
    pub model: String,
    pub slot: usize,
    pub attempt: u32,
    pub detail: String,
}

/// Append-only log of transport events.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditLog {
    pub entries: Vec<AuditEntry>,
}

impl AuditLog {
    pub fn push(&mut self, kind: AuditKind, model: &str, slot: usize, attempt: u32, detail: String) {
        self.entries.push(AuditEntry {
            kind,
            timestamp: chrono::Utc::now(),
            model: model.to_string(),
            slot,
            attempt,
            detail,
        });
    }

    /// Number of entries involving the network at all.
    pub fn transport_entry_count(&self) -> usize {
        self.entries.len()
    }
}

/// HTTP client settings. The API key is read from the named environment
/// variable at construction, never from flags or files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpClientConfig {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token; `None` sends no auth.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub backoff_initial_ms: u64,
    pub backoff_multiplier: f64,
    pub max_in_flight: usize,
}

impl Default for HttpClientConfig {
    fn default() -> Self {
        HttpClientConfig {
            base_url: "http://127.0.0.1:8080".to_string(),
            model: "mock-calibrated".to_string(),
            api_key_env: None,
            timeout_secs: 60,
            max_attempts: 3,
            backoff_initial_ms: 1000,
            backoff_multiplier: 2.0,
            max_in_flight: 4,
        }
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    seed: u64,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

/// Chat-completion client over HTTP with bounded retries, exponential
/// backoff, per-request timeout, and full audit logging.
pub struct HttpChatClient {
    config: HttpClientConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    audit: Mutex<AuditLog>,
}

impl HttpChatClient {
    pub fn new(config: HttpClientConfig) -> Result<HttpChatClient> {
        if config.max_attempts == 0 {
            return Err(Error::InvalidConfig("max_attempts must be >= 1".into()));
        }
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::InvalidConfig(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpChatClient {
            config,
            api_key,
            agent,
            audit: Mutex::new(AuditLog::default()),
        })
    }

    pub fn config(&self) -> &HttpClientConfig {
        &self.config
    }

    /// Snapshot of the transport audit log.
    pub fn audit_snapshot(&self) -> AuditLog {
        self.audit.lock().expect("audit lock").clone()
    }

    fn log(&self, kind: AuditKind, slot: usize, attempt: u32, detail: String) {
        self.audit
            .lock()
            .expect("audit lock")
            .push(kind, &self.config.model, slot, attempt, detail);
    }

    /// One POST; `Ok(Ok(text))` success, `Ok(Err(msg))` transient failure,
    /// `Err` fatal (non-retryable HTTP status).
    fn attempt(
        &self,
        url: &str,
        body: &str,
        slot: usize,
    ) -> std::result::Result<std::result::Result<String, String>, Error> {
        let mut request = self
            .agent
            .post(url)
            .header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("authorization", &format!("Bearer {key}"));
        }
        let mut response = match request.send(body) {
            Ok(r) => r,
            Err(e) => return Ok(Err(format!("transport: {e}"))),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Ok(Err(format!("body read: {e}"))),
        };
        if status == 429 || status >= 500 {
            return Ok(Err(format!("status {status}")));
        }
        if status != 200 {
            return Err(Error::Transport(format!(
                "{} returned status {status} for slot {slot}: {text}",
                self.config.model
            )));
        }
        let wire: WireResponse = serde_json::from_str(&text)
            .map_err(|e| Error::Transport(format!("malformed completion body: {e}")))?;
        let content = wire
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Error::Transport("completion with no choices".into()))?;
        Ok(Ok(content))
    }
}

impl ModelClient for HttpChatClient {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn generate(&self, prompt_text: &str, params: &SamplingParams, slot: usize) -> Result<String> {
        let url = format!(
            "{}/v1/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let request = WireRequest {
            model: &self.config.model,
            messages: vec![WireMessage {
                role: "user",
                content: prompt_text,
            }],
            temperature: params.temperature,
            seed: params.slot_seed(slot),
        };
        let body = serde_json::to_string(&request).expect("request serializes");

        let mut backoff_ms = self.config.backoff_initial_ms as f64;
        let mut last = String::new();
        for attempt in 1..=self.config.max_attempts {
            self.log(
                AuditKind::Request,
                slot,
                attempt,
                format!("POST {url} ({} bytes)", body.len()),
            );
            match self.attempt(&url, &body, slot) {
                Ok(Ok(content)) => {
                    self.log(
                        AuditKind::Response,
                        slot,
                        attempt,
                        format!("{} bytes", content.len()),
                    );
                    return Ok(content);
                }
                Ok(Err(transient)) => {
                    last = transient.clone();
                    if attempt < self.config.max_attempts {
                        self.log(
                            AuditKind::Retry,
                            slot,
                            attempt,
                            format!("{transient}; backing off {backoff_ms:.0} ms"),
                        );
                        std::thread::sleep(Duration::from_millis(backoff_ms as u64));
                        backoff_ms *= self.config.backoff_multiplier;
                    }
                }
                Err(fatal) => {
                    self.log(AuditKind::TransportError, slot, attempt, fatal.to_string());
                    return Err(fatal);
                }
            }
        }
        self.log(
            AuditKind::TransportError,
            slot,
            self.config.max_attempts,
            last.clone(),
        );
        Err(Error::Transport(format!(
            "{} failed after {} attempts: {last}",
            self.config.model, self.config.max_attempts
        )))
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight
    }
}
