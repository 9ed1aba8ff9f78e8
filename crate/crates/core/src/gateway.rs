//! Chat-completion transport.
//!
//! [`HttpClient`] talks to any OpenAI-compatible `/chat/completions` endpoint.
//! [`ScriptedClient`] replays an ordered list of canned responses and is what
//! the deterministic tests run against.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use log::{debug, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const API_KEY_ENV: &str = "PROMPTFORGE_API_KEY";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("authentication failed (HTTP {status})")]
    Auth { status: u16 },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed endpoint response: {0}")]
    Malformed(String),
    #[error("mock script exhausted")]
    ScriptExhausted,
    #[error("mock script: {0}")]
    Script(String),
    #[error("missing credential: environment variable {0} is not set")]
    MissingCredential(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_name: String,
    pub system_text: Option<String>,
    pub user_text: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.user_text.is_empty() {
            return Err(GatewayError::InvalidRequest("user text is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_output_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    /// Raw model output, unmodified.
    pub text: String,
    pub prompt_token_estimate: usize,
    pub latency: Duration,
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;

    /// Maximum number of concurrent `complete` calls the caller should issue.
    fn max_in_flight(&self) -> usize {
        1
    }
}

/// Conservative token estimate: one token per three characters, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(3)
}

fn prompt_estimate(request: &ChatRequest) -> usize {
    estimate_tokens(&request.user_text) + request.system_text.as_deref().map_or(0, estimate_tokens)
}

/// Replays scripted responses in order, one per call.
#[derive(Debug)]
pub struct ScriptedClient {
    script: Mutex<VecDeque<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptLine {
    response: String,
}

impl ScriptedClient {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            script: Mutex::new(responses.into_iter().map(Into::into).collect()),
        }
    }

    /// Reads a newline-delimited script of `{"response": "..."}` records.
    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path).map_err(|e| GatewayError::Script(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        let mut responses = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ScriptLine =
                serde_json::from_str(line).map_err(|e| GatewayError::Script(format!("line {}: {e}", i + 1)))?;
            responses.push(parsed.response);
        }
        Ok(Self::new(responses))
    }

    /// Serialises responses into the script file format.
    pub fn to_script(responses: &[impl AsRef<str>]) -> String {
        let mut out = String::new();
        for r in responses {
            let line = serde_json::json!({ "response": r.as_ref() });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().expect("script lock").len()
    }
}

impl ChatClient for ScriptedClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let started = Instant::now();
        let text = self
            .script
            .lock()
            .expect("script lock")
            .pop_front()
            .ok_or(GatewayError::ScriptExhausted)?;
        Ok(ChatResponse {
            text,
            prompt_token_estimate: prompt_estimate(request),
            latency: started.elapsed(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub base_delay: Duration,
    /// Scale each delay by a random factor in [0.5, 1.0].
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
            jitter: true,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        let base = self.base_delay.saturating_mul(1u32 << retry.min(16));
        if self.jitter {
            base.mul_f64(rand::rng().random_range(0.5..=1.0))
        } else {
            base
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: String,
    pub retry: RetryPolicy,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: api_key.into(),
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(120),
            max_in_flight: 4,
        }
    }

    /// Reads the credential from `PROMPTFORGE_API_KEY`.
    pub fn from_env(base_url: impl Into<String>) -> Result<Self, GatewayError> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| GatewayError::MissingCredential(API_KEY_ENV))?;
        Ok(Self::new(base_url, key))
    }
}

pub struct HttpClient {
    config: HttpConfig,
    endpoint: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: Option<String>,
}

enum Attempt {
    Done(String),
    Retryable(GatewayError),
    Fatal(GatewayError),
}

impl HttpClient {
    pub fn new(config: HttpConfig) -> Self {
        let endpoint = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self {
            config,
            endpoint,
            agent,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn body(request: &ChatRequest) -> WireRequest<'_> {
        let mut messages = Vec::with_capacity(2);
        if let Some(system) = request.system_text.as_deref() {
            messages.push(WireMessage {
                role: "system",
                content: system,
            });
        }
        messages.push(WireMessage {
            role: "user",
            content: &request.user_text,
        });
        WireRequest {
            model: &request.model_name,
            messages,
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
        }
    }

    fn attempt(&self, body: &WireRequest<'_>, attempts: u32) -> Attempt {
        let sent = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.config.api_key))
            .send_json(body);
        let mut response = match sent {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retryable(GatewayError::Transport {
                    attempts,
                    message: e.to_string(),
                })
            }
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Retryable(GatewayError::Transport {
                    attempts,
                    message: e.to_string(),
                })
            }
        };
        match status {
            200..=299 => match extract_content(&text) {
                Ok(content) => Attempt::Done(content),
                Err(e) => Attempt::Fatal(e),
            },
            401 | 403 => Attempt::Fatal(GatewayError::Auth { status }),
            429 => Attempt::Retryable(GatewayError::RateLimited { attempts }),
            408 | 500..=599 => Attempt::Retryable(GatewayError::Status { status, body: text }),
            _ => Attempt::Fatal(GatewayError::Status { status, body: text }),
        }
    }
}

/// Pulls the first choice's message content out of a completion body.
pub fn extract_content(body: &str) -> Result<String, GatewayError> {
    let parsed: WireResponse = serde_json::from_str(body).map_err(|e| GatewayError::Malformed(e.to_string()))?;
    parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::Malformed("no choices in response".into()))?
        .message
        .content
        .ok_or_else(|| GatewayError::Malformed("first choice has no content".into()))
}

impl ChatClient for HttpClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let body = Self::body(request);
        let started = Instant::now();
        let mut attempt = 0;
        loop {
            attempt += 1;
            let err = match self.attempt(&body, attempt) {
                Attempt::Done(text) => {
                    return Ok(ChatResponse {
                        text,
                        prompt_token_estimate: prompt_estimate(request),
                        latency: started.elapsed(),
                    })
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retryable(e) => e,
            };
            if attempt > self.config.retry.max_retries {
                warn!("giving up on {} after {attempt} attempts: {err}", self.endpoint);
                return Err(err);
            }
            let delay = self.config.retry.delay(attempt - 1);
            debug!("attempt {attempt} failed ({err}); retrying in {delay:?}");
            std::thread::sleep(delay);
        }
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight.max(1)
    }
}
