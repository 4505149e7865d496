//! Prompt construction, completion backends and answer parsing.
//!
//! Every completion is addressed by a prompt hash: the lowercase hex
//! SHA-256 of the UTF-8 bytes
//!
//! ```text
//! "trialscreen-prompt-v1\n" + model_name + "\n" + temperature (3 decimals)
//!     + "\n" + max_output_tokens + "\n" + prompt text
//! ```
//!
//! so the same prompt and parameters hash identically on every platform.
//! Replay caches and scripted backends key on this value.

mod mock;
mod parse;
mod prompt;
mod remote;
mod replay;
mod spec;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use mock::{FailStage, MockBackend, MockRule, MockScript, NoiseConfig};
pub use parse::{parse_label, parse_selection, SelectionParse};
pub use prompt::{Exemplar, PromptBudget, PromptBuilder, PromptTemplates};
pub use remote::{ApiStyle, RateLimiter, RemoteBackend, RemoteConfig, RetryPolicy};
pub use replay::{load_completions, RecordingBackend, ReplayBackend};
pub use spec::BackendSpec;

use crate::error::GatewayError;
use crate::model::{Criterion, CriterionKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStage {
    Selection,
    Reasoning,
    Labeling,
    /// Reasoning and label in a single call.
    Combined,
}

/// Structured inputs behind a prompt. Scripted backends read these instead
/// of parsing prompt text; they never affect the prompt hash.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptContext {
    pub profile_id: String,
    pub criteria: Vec<Criterion>,
    pub reasoning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub stage: PromptStage,
    pub text: String,
    pub exemplar_id: String,
    pub criterion_keys: Vec<CriterionKey>,
    pub token_estimate: usize,
    #[serde(skip)]
    pub context: PromptContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub model_name: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
}

fn default_max_output_tokens() -> u32 {
    512
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            model_name: "gpt-3.5-turbo-instruct".into(),
            temperature: 0.0,
            max_output_tokens: default_max_output_tokens(),
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) || self.temperature.is_nan() {
            return Err(GatewayError::Config(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.model_name.trim().is_empty() {
            return Err(GatewayError::Config("model_name must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Mock,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub prompt_hash: String,
    pub raw_response: String,
    pub backend: BackendKind,
    pub latency_ms: u64,
    pub created_at: DateTime<Utc>,
    /// Attempts beyond the first that were needed.
    #[serde(default)]
    pub retries: u32,
}

pub fn prompt_hash(text: &str, params: &ModelParams) -> String {
    let mut h = Sha256::new();
    h.update(b"trialscreen-prompt-v1\n");
    h.update(params.model_name.as_bytes());
    h.update(b"\n");
    h.update(format!("{:.3}", params.temperature).as_bytes());
    h.update(b"\n");
    h.update(params.max_output_tokens.to_string().as_bytes());
    h.update(b"\n");
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

pub trait CompletionBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn complete(&self, bundle: &PromptBundle, params: &ModelParams) -> Result<CompletionRecord, GatewayError>;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Box<B> {
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }

    fn complete(&self, bundle: &PromptBundle, params: &ModelParams) -> Result<CompletionRecord, GatewayError> {
        (**self).complete(bundle, params)
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for std::sync::Arc<B> {
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }

    fn complete(&self, bundle: &PromptBundle, params: &ModelParams) -> Result<CompletionRecord, GatewayError> {
        (**self).complete(bundle, params)
    }
}

pub fn complete(
    bundle: &PromptBundle,
    params: &ModelParams,
    backend: &dyn CompletionBackend,
) -> Result<CompletionRecord, GatewayError> {
    backend.complete(bundle, params)
}
