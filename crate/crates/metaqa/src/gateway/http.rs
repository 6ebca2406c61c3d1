//! Live backend speaking the chat-completions HTTP+JSON wire protocol.
//!
//! Works against any endpoint exposing the `/v1/chat/completions` shape,
//! including local model servers. Transient failures (HTTP 429 and 5xx,
//! transport errors) are retried with jittered exponential backoff; 429
//! honors `Retry-After` when present. Authentication failures are not
//! retried.

use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendKind, BackendReply, ChatRequest, GatewayError, TokenUsage};

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub endpoint_url: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    /// Total attempts including the first.
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub request_timeout: Duration,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: "METAQA_API_KEY".into(),
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
            request_timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: [WireMessage<'a>; 2],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireContent,
}

#[derive(Deserialize)]
struct WireContent {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
    #[serde(default)]
    total_tokens: u64,
}

pub struct HttpBackend {
    config: HttpConfig,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, GatewayError> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            GatewayError::InvalidRequest(format!(
                "API key environment variable `{}` is not set",
                config.api_key_env
            ))
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| GatewayError::InvalidRequest(format!("HTTP client: {e}")))?;
        Ok(Self {
            config,
            api_key,
            client,
        })
    }

    fn backoff(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        if let Some(after) = retry_after {
            return after;
        }
        let base = self.config.initial_backoff * 2u32.saturating_pow(attempt);
        let jitter = Duration::from_millis(rand::thread_rng().gen_range(0..=250));
        base + jitter
    }

    fn send_once(&self, request: &ChatRequest) -> Result<BackendReply, AttemptError> {
        let body = WireRequest {
            model: &request.model_id,
            messages: [
                WireMessage {
                    role: "system",
                    content: &request.system_prompt,
                },
                WireMessage {
                    role: "user",
                    content: &request.user_prompt,
                },
            ],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let started = Instant::now();
        let response = self
            .client
            .post(&self.config.endpoint_url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| AttemptError::Transient(format!("transport: {e}"), None))?;
        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(AttemptError::Fatal(GatewayError::AuthFailure {
                status: status.as_u16(),
            }));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            let retry_after = response
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse::<u64>().ok())
                .map(Duration::from_secs);
            return Err(AttemptError::Transient(
                format!("HTTP {status}"),
                retry_after,
            ));
        }
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            let head: String = text.chars().take(200).collect();
            return Err(AttemptError::Fatal(GatewayError::MalformedResponse(
                format!("HTTP {status}: {head}"),
            )));
        }
        let wire: WireResponse = response
            .json()
            .map_err(|e| AttemptError::Fatal(GatewayError::MalformedResponse(e.to_string())))?;
        let choice = wire.choices.into_iter().next().ok_or_else(|| {
            AttemptError::Fatal(GatewayError::MalformedResponse("no choices".into()))
        })?;
        let text = choice.message.content.unwrap_or_default();
        let usage = match wire.usage {
            Some(wire_usage) => {
                let usage = TokenUsage::new(wire_usage.prompt_tokens, wire_usage.completion_tokens);
                if wire_usage.total_tokens != 0 && wire_usage.total_tokens != usage.total_tokens {
                    log::warn!(
                        "wire total_tokens {} disagrees with prompt+completion {}; using the sum",
                        wire_usage.total_tokens,
                        usage.total_tokens
                    );
                }
                usage
            }
            None => TokenUsage::default(),
        };
        Ok(BackendReply {
            text,
            usage,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

enum AttemptError {
    /// Worth retrying; optional server-mandated delay.
    Transient(String, Option<Duration>),
    Fatal(GatewayError),
}

impl Backend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<BackendReply, GatewayError> {
        let mut last_detail = String::new();
        for attempt in 0..self.config.attempts {
            match self.send_once(request) {
                Ok(reply) => return Ok(reply),
                Err(AttemptError::Fatal(err)) => return Err(err),
                Err(AttemptError::Transient(detail, retry_after)) => {
                    last_detail = detail;
                    if attempt + 1 < self.config.attempts {
                        std::thread::sleep(self.backoff(attempt, retry_after));
                    }
                }
            }
        }
        Err(GatewayError::BackendUnreachable {
            attempts: self.config.attempts,
            detail: last_detail,
        })
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }
}
