use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{prompt_hash, BackendKind, CompletionBackend, CompletionRecord, ModelParams, PromptBundle};
use crate::error::GatewayError;
use crate::io::jsonl_lines;

/// Reads a line-delimited completion file. Malformed lines are errors.
pub fn load_completions(path: &Path) -> Result<Vec<CompletionRecord>, GatewayError> {
    let lines = jsonl_lines(path).map_err(|source| GatewayError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    lines
        .into_iter()
        .map(|(n, line)| {
            serde_json::from_str(&line)
                .map_err(|e| GatewayError::Config(format!("{}:{n}: bad completion record: {e}", path.display())))
        })
        .collect()
}

/// Answers from recorded completions only. Records are returned exactly as
/// stored, so a replayed run reproduces the recorded one byte for byte.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    by_hash: HashMap<String, CompletionRecord>,
}

impl ReplayBackend {
    pub fn new(records: impl IntoIterator<Item = CompletionRecord>) -> Self {
        let mut by_hash = HashMap::new();
        for r in records {
            by_hash.entry(r.prompt_hash.clone()).or_insert(r);
        }
        Self { by_hash }
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self::new(load_completions(path)?))
    }

    pub fn len(&self) -> usize {
        self.by_hash.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_hash.is_empty()
    }
}

impl CompletionBackend for ReplayBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn complete(&self, bundle: &PromptBundle, params: &ModelParams) -> Result<CompletionRecord, GatewayError> {
        let hash = prompt_hash(&bundle.text, params);
        self.by_hash
            .get(&hash)
            .cloned()
            .ok_or(GatewayError::CacheMiss { prompt_hash: hash })
    }
}

#[derive(Debug, Default)]
struct Recorded {
    by_hash: HashMap<String, CompletionRecord>,
}

/// Wraps a backend and keeps every successful completion, first one per
/// prompt hash. With a log path, new records are also appended to that file.
#[derive(Debug)]
pub struct RecordingBackend<B> {
    inner: B,
    log: Option<PathBuf>,
    recorded: Mutex<Recorded>,
}

impl<B: CompletionBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            log: None,
            recorded: Mutex::new(Recorded::default()),
        }
    }

    pub fn with_log(mut self, path: impl Into<PathBuf>) -> Self {
        self.log = Some(path.into());
        self
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    /// Recorded completions sorted by prompt hash, independent of call order.
    pub fn records(&self) -> Vec<CompletionRecord> {
        let rec = self.recorded.lock().expect("recording lock");
        let mut out: Vec<_> = rec.by_hash.values().cloned().collect();
        out.sort_by(|a, b| a.prompt_hash.cmp(&b.prompt_hash));
        out
    }

    fn append(&self, path: &Path, record: &CompletionRecord) -> Result<(), GatewayError> {
        let io = |source| GatewayError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        let mut line = serde_json::to_string(record).expect("serializable record");
        line.push('\n');
        f.write_all(line.as_bytes()).map_err(io)
    }
}

impl<B: CompletionBackend> CompletionBackend for RecordingBackend<B> {
    fn kind(&self) -> BackendKind {
        self.inner.kind()
    }

    fn complete(&self, bundle: &PromptBundle, params: &ModelParams) -> Result<CompletionRecord, GatewayError> {
        let record = self.inner.complete(bundle, params)?;
        let mut rec = self.recorded.lock().expect("recording lock");
        if !rec.by_hash.contains_key(&record.prompt_hash) {
            if let Some(path) = &self.log {
                self.append(path, &record)?;
            }
            rec.by_hash.insert(record.prompt_hash.clone(), record.clone());
        }
        Ok(record)
    }
}
