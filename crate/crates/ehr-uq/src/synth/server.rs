//! Local HTTP mock of the chat-completions wire protocol, so the real HTTP
//! client can be exercised end to end with no external network.
//!
//! The server is deliberately minimal: HTTP/1.1 with keep-alive, one route.
//! Answer text comes from [`generate_mock_response`], the same function the
//! in-process mock client uses, so both transports return identical bytes
//! for identical logical requests.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;

use crate::blackbox::fingerprint_text;
use crate::error::{Error, Result};

use super::mock::{generate_mock_response, MockBehavior, PromptOracle};

/// Behaviors keyed by model name, plus optional bearer-token auth.
#[derive(Debug, Clone)]
pub struct MockServerConfig {
    pub behaviors: BTreeMap<String, MockBehavior>,
    /// When set, requests must carry `authorization: Bearer <key>`.
    pub api_key: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    role: String,
    content: String,
}

#[derive(Deserialize)]
struct WireRequest {
    model: String,
    messages: Vec<WireMessage>,
    #[serde(default)]
    seed: u64,
}

struct ServerState {
    config: MockServerConfig,
    oracle: Arc<PromptOracle>,
    request_count: AtomicUsize,
}

/// A running mock endpoint on an ephemeral localhost port. Dropping the
/// handle shuts the listener down.
pub struct MockServer {
    addr: SocketAddr,
    state: Arc<ServerState>,
    shutdown: Arc<AtomicBool>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl MockServer {
    pub fn start(config: MockServerConfig, oracle: Arc<PromptOracle>) -> Result<MockServer> {
        if config.behaviors.is_empty() {
            return Err(Error::InvalidConfig(
                "mock server needs at least one model behavior".into(),
            ));
        }
        for behavior in config.behaviors.values() {
            behavior.validate()?;
        }
        let listener = TcpListener::bind(("127.0.0.1", 0))
            .map_err(|e| Error::Transport(format!("mock server bind: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| Error::Transport(format!("mock server addr: {e}")))?;
        listener
            .set_nonblocking(true)
            .map_err(|e| Error::Transport(format!("mock server nonblocking: {e}")))?;

        let state = Arc::new(ServerState {
            config,
            oracle,
            request_count: AtomicUsize::new(0),
        });
        let shutdown = Arc::new(AtomicBool::new(false));
        let loop_state = Arc::clone(&state);
        let loop_shutdown = Arc::clone(&shutdown);
        let handle = std::thread::spawn(move || {
            let mut workers: Vec<std::thread::JoinHandle<()>> = Vec::new();
            while !loop_shutdown.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let state = Arc::clone(&loop_state);
                        workers.push(std::thread::spawn(move || {
                            let _ = handle_connection(stream, &state);
                        }));
                        workers.retain(|w| !w.is_finished());
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(2));
                    }
                    Err(_) => break,
                }
            }
            for w in workers {
                let _ = w.join();
            }
        });

        Ok(MockServer {
            addr,
            state,
            shutdown,
            handle: Some(handle),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests served so far; replay runs must leave this at zero.
    pub fn request_count(&self) -> usize {
        self.state.request_count.load(Ordering::Relaxed)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::Relaxed);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(mut stream: TcpStream, state: &ServerState) -> std::io::Result<()> {
    // Responses are tiny; Nagle would stall reused connections on the
    // delayed-ACK timer.
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    stream.set_write_timeout(Some(Duration::from_secs(5)))?;
    let mut reader = BufReader::new(stream.try_clone()?);

    loop {
        let mut request_line = String::new();
        if reader.read_line(&mut request_line)? == 0 || request_line.trim().is_empty() {
            return Ok(());
        }
        let mut parts = request_line.split_whitespace();
        let method = parts.next().unwrap_or("").to_string();
        let path = parts.next().unwrap_or("").to_string();

        let mut headers: BTreeMap<String, String> = BTreeMap::new();
        loop {
            let mut line = String::new();
            reader.read_line(&mut line)?;
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            if let Some((name, value)) = line.split_once(':') {
                headers.insert(name.trim().to_ascii_lowercase(), value.trim().to_string());
            }
        }
        let content_length: usize = headers
            .get("content-length")
            .and_then(|v| v.parse().ok())
            .unwrap_or(0);
        let mut body = vec![0u8; content_length];
        reader.read_exact(&mut body)?;

        state.request_count.fetch_add(1, Ordering::Relaxed);
        let (status, payload) = respond(state, &method, &path, &headers, &body);
        // Errors may leave framing in doubt, so only successes keep the
        // connection open for the client's pool to reuse.
        let close = status != 200
            || headers
                .get("connection")
                .is_some_and(|v| v.eq_ignore_ascii_case("close"));
        write_response(&mut stream, status, &payload, close)?;
        if close {
            return Ok(());
        }
    }
}

fn respond(
    state: &ServerState,
    method: &str,
    path: &str,
    headers: &BTreeMap<String, String>,
    body: &[u8],
) -> (u16, String) {
    if let Some(key) = &state.config.api_key {
        let expected = format!("Bearer {key}");
        if headers.get("authorization") != Some(&expected) {
            return (401, error_json("missing or invalid bearer token"));
        }
    }
    if method != "POST" || path != "/v1/chat/completions" {
        return (404, error_json("unknown route"));
    }
    let request: WireRequest = match serde_json::from_slice(body) {
        Ok(r) => r,
        Err(e) => return (400, error_json(&format!("malformed request: {e}"))),
    };
    let Some(behavior) = state.config.behaviors.get(&request.model) else {
        return (404, error_json(&format!("unknown model {}", request.model)));
    };
    let Some(content) = request
        .messages
        .iter()
        .rev()
        .find(|m| m.role == "user" || m.role.is_empty())
        .map(|m| m.content.as_str())
    else {
        return (400, error_json("no user message"));
    };
    let fingerprint = fingerprint_text(content);
    let Some(entry) = state.oracle.get(&fingerprint) else {
        return (400, error_json("prompt fingerprint not known to the oracle"));
    };
    let text = generate_mock_response(behavior, entry, &fingerprint, request.seed);
    let payload = serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}}]
    });
    (200, payload.to_string())
}

fn error_json(message: &str) -> String {
    serde_json::json!({ "error": message }).to_string()
}

fn write_response(
    stream: &mut TcpStream,
    status: u16,
    payload: &str,
    close: bool,
) -> std::io::Result<()> {
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        401 => "Unauthorized",
        404 => "Not Found",
        _ => "Error",
    };
    let connection = if close { "close" } else { "keep-alive" };
    let response = format!(
        "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: {connection}\r\n\r\n{payload}",
        payload.len()
    );
    stream.write_all(response.as_bytes())?;
    stream.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackbox::{
        build_prompt, sample_responses, default_tasks, HttpChatClient, HttpClientConfig,
        ModelClient, PromptMode, Prompt, SamplingParams,
    };
    use crate::ehr::ClinicalNarrative;
    use crate::synth::MockClient;

    fn prompt_and_oracle() -> (Prompt, Arc<PromptOracle>) {
        let task = default_tasks().remove(1);
        let narrative = ClinicalNarrative {
            text: "Patient age and demographic information:\nserver test".to_string(),
            token_estimate: 10,
            included_events: 0,
            truncated: false,
            unknown_codes: 0,
        };
        let prompt = build_prompt(&narrative, &[task.clone()], PromptMode::Single).unwrap();
        let mut oracle = PromptOracle::new();
        oracle
            .record(&prompt, &BTreeMap::from([(task.id, 1u8)]))
            .unwrap();
        (prompt, Arc::new(oracle))
    }

    fn http_client(base_url: &str, model: &str, key_env: Option<&str>) -> HttpChatClient {
        HttpChatClient::new(HttpClientConfig {
            base_url: base_url.to_string(),
            model: model.to_string(),
            api_key_env: key_env.map(str::to_string),
            timeout_secs: 10,
            max_attempts: 2,
            backoff_initial_ms: 1,
            backoff_multiplier: 2.0,
            max_in_flight: 4,
        })
        .unwrap()
    }

    #[test]
    fn http_transport_matches_in_process_mock_exactly() {
        let (prompt, oracle) = prompt_and_oracle();
        let behavior = MockBehavior::calibrated(21);
        let server = MockServer::start(
            MockServerConfig {
                behaviors: BTreeMap::from([("mock-calibrated".to_string(), behavior.clone())]),
                api_key: None,
            },
            Arc::clone(&oracle),
        )
        .unwrap();

        let http = http_client(&server.base_url(), "mock-calibrated", None);
        let local = MockClient::new("mock-calibrated", behavior, oracle).unwrap();
        let params = SamplingParams {
            temperature: 0.9,
            seed: 4,
        };
        let via_http = sample_responses(&http, &prompt, 5, &params).unwrap();
        let via_local = sample_responses(&local, &prompt, 5, &params).unwrap();
        let texts_http: Vec<&str> = via_http.raw.iter().map(|g| g.text.as_str()).collect();
        let texts_local: Vec<&str> = via_local.raw.iter().map(|g| g.text.as_str()).collect();
        assert_eq!(texts_http, texts_local);
        assert!(server.request_count() >= 5);
    }

    #[test]
    fn bearer_auth_enforced() {
        let (prompt, oracle) = prompt_and_oracle();
        let server = MockServer::start(
            MockServerConfig {
                behaviors: BTreeMap::from([(
                    "mock-calibrated".to_string(),
                    MockBehavior::calibrated(1),
                )]),
                api_key: Some("sekrit".to_string()),
            },
            oracle,
        )
        .unwrap();

        // No key: 401 is a fatal transport error, no retry storm.
        let anon = http_client(&server.base_url(), "mock-calibrated", None);
        assert!(matches!(
            anon.generate(&prompt.full_text(), &SamplingParams::default(), 0),
            Err(Error::Transport(_))
        ));

        // Correct key from the environment.
        std::env::set_var("EHR_UQ_MOCK_TEST_KEY", "sekrit");
        let authed = http_client(
            &server.base_url(),
            "mock-calibrated",
            Some("EHR_UQ_MOCK_TEST_KEY"),
        );
        assert!(authed
            .generate(&prompt.full_text(), &SamplingParams::default(), 0)
            .is_ok());
    }

    #[test]
    fn unknown_model_and_fingerprint_are_fatal() {
        let (prompt, oracle) = prompt_and_oracle();
        let server = MockServer::start(
            MockServerConfig {
                behaviors: BTreeMap::from([(
                    "mock-calibrated".to_string(),
                    MockBehavior::calibrated(1),
                )]),
                api_key: None,
            },
            oracle,
        )
        .unwrap();

        let wrong_model = http_client(&server.base_url(), "mock-unknown", None);
        assert!(wrong_model
            .generate(&prompt.full_text(), &SamplingParams::default(), 0)
            .is_err());

        let right_model = http_client(&server.base_url(), "mock-calibrated", None);
        assert!(right_model
            .generate("a prompt the oracle never saw", &SamplingParams::default(), 0)
            .is_err());
    }
}
