//! HTTP completion backend for OpenAI-style JSON endpoints.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{prompt_hash, BackendKind, CompletionBackend, CompletionRecord, ModelParams, PromptBundle};
use crate::error::GatewayError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiStyle {
    /// `{"prompt": ...}` in, `choices[0].text` out.
    #[default]
    Completions,
    /// `{"messages": [...]}` in, `choices[0].message.content` out.
    Chat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Attempts after the first one.
    pub max_retries: u32,
    /// Delay before retry n (0-based) is `base_delay_ms * 2^n`.
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 1000,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1u64 << retry.min(20)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub url: String,
    #[serde(default)]
    pub api_style: ApiStyle,
    /// Environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Minimum spacing between request starts.
    #[serde(default)]
    pub min_interval_ms: u64,
}

fn default_timeout() -> u64 {
    60
}

fn default_in_flight() -> usize {
    4
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_style: ApiStyle::default(),
            api_key_env: None,
            timeout_secs: default_timeout(),
            retry: RetryPolicy::default(),
            max_in_flight: default_in_flight(),
            min_interval_ms: 0,
        }
    }
}

/// Spaces request starts at least `min_interval` apart.
#[derive(Debug)]
pub struct RateLimiter {
    min_interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(min_interval: Duration) -> Self {
        Self {
            min_interval,
            next: Mutex::new(None),
        }
    }

    pub fn acquire(&self) {
        if self.min_interval.is_zero() {
            return;
        }
        let wait = {
            let mut next = self.next.lock().expect("rate limiter lock");
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.min_interval);
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug)]
struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn enter(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().expect("in-flight lock");
        while *active >= self.limit {
            active = self.freed.wait(active).expect("in-flight lock");
        }
        *active += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().expect("in-flight lock") -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug)]
pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    token: Option<String>,
    limiter: RateLimiter,
    in_flight: InFlight,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, GatewayError> {
        let token = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| GatewayError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self {
            limiter: RateLimiter::new(Duration::from_millis(config.min_interval_ms)),
            in_flight: InFlight {
                limit: config.max_in_flight.max(1),
                active: Mutex::new(0),
                freed: Condvar::new(),
            },
            config,
            client,
            token,
        })
    }

    fn request_body(&self, text: &str, params: &ModelParams) -> Value {
        match self.config.api_style {
            ApiStyle::Completions => json!({
                "model": params.model_name,
                "prompt": text,
                "temperature": params.temperature,
                "max_tokens": params.max_output_tokens,
            }),
            ApiStyle::Chat => json!({
                "model": params.model_name,
                "messages": [{"role": "user", "content": text}],
                "temperature": params.temperature,
                "max_tokens": params.max_output_tokens,
            }),
        }
    }

    fn attempt(&self, body: &Value) -> Result<String, GatewayError> {
        self.limiter.acquire();
        let _slot = self.in_flight.enter();
        let mut req = self.client.post(&self.config.url).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(GatewayError::Http {
                status,
                body: text.chars().take(500).collect(),
            });
        }
        extract_text(&text)
    }
}

fn extract_text(body: &str) -> Result<String, GatewayError> {
    let v: Value = serde_json::from_str(body).map_err(|e| GatewayError::Malformed(e.to_string()))?;
    let choice = &v["choices"][0];
    choice["text"]
        .as_str()
        .or_else(|| choice["message"]["content"].as_str())
        .map(String::from)
        .ok_or_else(|| GatewayError::Malformed("no choices[0].text or choices[0].message.content".into()))
}

impl CompletionBackend for RemoteBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn complete(&self, bundle: &PromptBundle, params: &ModelParams) -> Result<CompletionRecord, GatewayError> {
        params.validate()?;
        let body = self.request_body(&bundle.text, params);
        let started = Instant::now();
        let policy = self.config.retry;
        let mut retries = 0;
        loop {
            match self.attempt(&body) {
                Ok(raw_response) => {
                    return Ok(CompletionRecord {
                        prompt_hash: prompt_hash(&bundle.text, params),
                        raw_response,
                        backend: BackendKind::Remote,
                        latency_ms: started.elapsed().as_millis() as u64,
                        created_at: Utc::now(),
                        retries,
                    })
                }
                Err(e) if e.is_transient() && retries < policy.max_retries => {
                    tracing::warn!(error = %e, retry = retries + 1, "transient completion failure");
                    std::thread::sleep(policy.delay(retries));
                    retries += 1;
                }
                Err(e) if e.is_transient() => {
                    return Err(GatewayError::RetriesExhausted {
                        attempts: retries + 1,
                        last: e.to_string(),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}
