use std::path::PathBuf;

use thiserror::Error;

use crate::model::CriterionKey;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("assessments belong to more than one trial ({first}, {other})")]
    MixedTrials { first: String, other: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl ModelError {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ModelError::Invalid {
            field,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate profile_id `{id}` at {path}:{line}")]
    DuplicateProfile { path: PathBuf, line: usize, id: String },
    #[error("invalid query: {0}")]
    Query(String),
    #[error("transport failure talking to {source_name}: {message}")]
    Transport { source_name: String, message: String },
    #[error("registry config: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IngestError {
    /// Transport failures may succeed on a later attempt.
    pub fn is_retryable(&self) -> bool {
        matches!(self, IngestError::Transport { .. })
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("replay cache has no completion for prompt {prompt_hash}")]
    CacheMiss { prompt_hash: String },
    #[error("prompt for {key} needs ~{tokens} tokens, over the budget of {budget}")]
    PromptTooLarge {
        key: CriterionKey,
        tokens: usize,
        budget: usize,
    },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("scripted failure: {0}")]
    Scripted(String),
    #[error("invalid prompt request: {0}")]
    InvalidRequest(String),
    #[error("config: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GatewayError {
    /// Transport errors, 5xx and 429 are worth another attempt.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::Transport(_) => true,
            GatewayError::Http { status, .. } => *status == 429 || (500..600).contains(status),
            _ => false,
        }
    }
}

/// Raised when a model answer contains none of the label tokens.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no label token found in response")]
pub struct LabelParseError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no gold annotation for criterion {0}")]
    MissingCriterion(CriterionKey),
    #[error("no gold annotation for trial {0}")]
    MissingTrial(String),
    #[error("inconsistent gold for trial {trial_id}: {detail}")]
    Inconsistent { trial_id: String, detail: String },
    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("run is {actual:?}, operation needs {expected}")]
    State {
        actual: crate::engine::RunState,
        expected: &'static str,
    },
    #[error("version conflict: expected {expected}, run is at {actual}")]
    Conflict { expected: u64, actual: u64 },
    #[error("invalid request: {0}")]
    Validation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}
