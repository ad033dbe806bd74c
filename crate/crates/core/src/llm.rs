//! Chat-completion clients: an HTTP client for OpenAI-compatible endpoints
//! and a scripted client that replays canned responses.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::prompt::{DialogueTurn, Speaker};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 1.4,
            top_p: 0.9,
            max_tokens: 1024,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::Config(
                "temperature must be nonnegative".into(),
            ));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::Config("top_p must be in (0, 1]".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub latency_ms: u64,
    pub usage: Option<TokenUsage>,
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    /// Rejected request (4xx) or invalid client settings. Not retried.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("request failed after {attempts} attempts: {message}")]
    Exhausted { attempts: u32, message: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("scripted responses exhausted after {0} calls")]
    ScriptExhausted(usize),
}

impl GatewayError {
    pub fn is_config(&self) -> bool {
        matches!(self, GatewayError::Config(_))
    }
}

pub trait ChatClient: Send + Sync {
    fn complete(
        &self,
        turns: &[DialogueTurn],
        params: &SamplingParams,
    ) -> Result<ChatResponse, GatewayError>;
}

fn role(speaker: Speaker) -> &'static str {
    match speaker {
        Speaker::System => "system",
        Speaker::User => "user",
        Speaker::Assistant => "assistant",
    }
}

/// JSON body of a chat-completions request.
pub fn request_body(model: &str, turns: &[DialogueTurn], params: &SamplingParams) -> Value {
    let messages: Vec<Value> = turns
        .iter()
        .map(|t| json!({"role": role(t.speaker), "content": t.text}))
        .collect();
    json!({
        "model": model,
        "messages": messages,
        "temperature": params.temperature,
        "top_p": params.top_p,
        "max_tokens": params.max_tokens,
    })
}

/// Extracts the first choice's message text and token counts.
pub fn parse_response_body(body: &Value) -> Result<(String, Option<TokenUsage>), GatewayError> {
    let text = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::Malformed("missing choices[0].message.content".into()))?;
    let usage = body.get("usage").map(|u| TokenUsage {
        prompt_tokens: u.get("prompt_tokens").and_then(Value::as_u64),
        completion_tokens: u.get("completion_tokens").and_then(Value::as_u64),
    });
    Ok((text.to_string(), usage))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://localhost:8000/v1".into(),
            model: "default".into(),
            api_key: None,
            timeout_secs: 120,
            max_retries: 3,
            backoff_base_ms: 500,
        }
    }
}

/// Blocking client for `POST {base_url}/chat/completions`.
///
/// Transport errors, 429 and 5xx responses are retried with exponential
/// backoff; any other 4xx fails immediately.
pub struct HttpChatClient {
    config: EndpointConfig,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(config: EndpointConfig) -> Result<Self, GatewayError> {
        if config.base_url.trim().is_empty() {
            return Err(GatewayError::Config("endpoint base URL is empty".into()));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpChatClient { config, http })
    }

    pub fn url(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }

    fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(
            self.config
                .backoff_base_ms
                .saturating_mul(1u64 << attempt.min(16)),
        )
    }
}

impl ChatClient for HttpChatClient {
    fn complete(
        &self,
        turns: &[DialogueTurn],
        params: &SamplingParams,
    ) -> Result<ChatResponse, GatewayError> {
        params.validate()?;
        let body = request_body(&self.config.model, turns, params);
        let url = self.url();
        let start = Instant::now();
        let mut retries = 0;
        loop {
            let mut request = self.http.post(&url).json(&body);
            if let Some(key) = &self.config.api_key {
                request = request.bearer_auth(key);
            }
            let failure = match request.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let value: Value = resp
                            .json()
                            .map_err(|e| GatewayError::Malformed(e.to_string()))?;
                        let (text, usage) = parse_response_body(&value)?;
                        return Ok(ChatResponse {
                            text,
                            latency_ms: start.elapsed().as_millis() as u64,
                            usage,
                            retries,
                        });
                    }
                    let detail = resp.text().unwrap_or_default();
                    if status.is_client_error() && status.as_u16() != 429 {
                        return Err(GatewayError::Config(format!(
                            "{url} returned {status}: {detail}"
                        )));
                    }
                    format!("{url} returned {status}")
                }
                Err(e) => format!("{url}: {e}"),
            };
            if retries >= self.config.max_retries {
                return Err(GatewayError::Exhausted {
                    attempts: retries + 1,
                    message: failure,
                });
            }
            tracing::warn!(attempt = retries + 1, %failure, "chat request failed, retrying");
            std::thread::sleep(self.backoff(retries));
            retries += 1;
        }
    }
}

/// Returns canned responses in order, byte for byte, with zero latency.
#[derive(Debug)]
pub struct ScriptedClient {
    queue: Mutex<VecDeque<String>>,
    served: Mutex<usize>,
}

impl ScriptedClient {
    pub fn new(script: Vec<String>) -> Result<Self, GatewayError> {
        if script.is_empty() {
            return Err(GatewayError::Config(
                "scripted client needs at least one response".into(),
            ));
        }
        Ok(ScriptedClient {
            queue: Mutex::new(script.into()),
            served: Mutex::new(0),
        })
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("script lock").len()
    }
}

impl ChatClient for ScriptedClient {
    fn complete(
        &self,
        _turns: &[DialogueTurn],
        _params: &SamplingParams,
    ) -> Result<ChatResponse, GatewayError> {
        let mut queue = self.queue.lock().expect("script lock");
        let mut served = self.served.lock().expect("script lock");
        match queue.pop_front() {
            Some(text) => {
                *served += 1;
                Ok(ChatResponse {
                    text,
                    latency_ms: 0,
                    usage: None,
                    retries: 0,
                })
            }
            None => Err(GatewayError::ScriptExhausted(*served)),
        }
    }
}
