//! Append-only per-run event logs with snapshots.
//!
//! Layout under the store root:
//!
//! ```text
//! runs/<run_id>/events.jsonl       created, screened, decided, failed
//! runs/<run_id>/snapshot.json      latest run state, rewritten after each event
//! runs/<run_id>/completions.jsonl  completions recorded while screening
//! ```
//!
//! An event is fsynced before the in-memory state changes. On open, each
//! run is rebuilt from its log; the snapshot is used only when its version
//! matches the log, otherwise the decisions are replayed through the
//! engine. A torn final line from a crash mid-append is dropped.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use trialscreen_core::engine::{apply_decisions, ReviewDecision, ScreeningRun};
use trialscreen_core::gateway::ModelParams;
use trialscreen_core::io::write_json_atomic;
use trialscreen_core::EngineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateRunRequest {
    pub profile_id: String,
    /// Name of a trial set in the catalog.
    pub trial_set: String,
    #[serde(default)]
    pub params: ModelParams,
    #[serde(default)]
    pub combined: bool,
    /// Keep only trials listing the profile's condition code.
    #[serde(default)]
    pub match_condition: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    Ready,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Created {
        run_id: String,
        request: CreateRunRequest,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        idempotency_key: Option<String>,
        at: DateTime<Utc>,
    },
    Screened {
        run: Box<ScreeningRun>,
    },
    Decided {
        expected_version: u64,
        version: u64,
        decisions: Vec<ReviewDecision>,
    },
    Failed {
        message: String,
    },
}

#[derive(Debug, Clone)]
pub struct RunEntry {
    pub run_id: String,
    pub request: CreateRunRequest,
    pub status: RunStatus,
    pub run: Option<ScreeningRun>,
    pub error: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("run {0} not found")]
    NotFound(String),
    #[error("run {0} is still screening")]
    Pending(String),
    #[error("run {run_id} failed: {message}")]
    Failed { run_id: String, message: String },
    #[error("etag mismatch: expected {expected}, current {current}")]
    Conflict { expected: String, current: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    runs: RwLock<BTreeMap<String, Arc<Mutex<RunEntry>>>>,
    keys: Mutex<BTreeMap<String, String>>,
}

impl Store {
    /// Opens or creates a store and reloads every run in it.
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        let runs_dir = root.join("runs");
        fs::create_dir_all(&runs_dir).map_err(io_err(&runs_dir))?;
        let mut runs = BTreeMap::new();
        let mut keys = BTreeMap::new();
        let mut dirs: Vec<PathBuf> = fs::read_dir(&runs_dir)
            .map_err(io_err(&runs_dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("events.jsonl").is_file())
            .collect();
        dirs.sort();
        for dir in dirs {
            let (entry, key) = load_run(&dir)?;
            if let Some(key) = key {
                keys.insert(key, entry.run_id.clone());
            }
            runs.insert(entry.run_id.clone(), Arc::new(Mutex::new(entry)));
        }
        Ok(Self {
            root: root.to_path_buf(),
            runs: RwLock::new(runs),
            keys: Mutex::new(keys),
        })
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(run_id)
    }

    fn slot(&self, run_id: &str) -> Result<Arc<Mutex<RunEntry>>, StoreError> {
        self.runs
            .read()
            .expect("store lock")
            .get(run_id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(run_id.to_string()))
    }

    /// Registers a run. Returns the run id and whether it is new: a reused
    /// idempotency key or an identical earlier submission yields the
    /// existing run.
    pub fn create(
        &self,
        run_id: &str,
        request: &CreateRunRequest,
        idempotency_key: Option<&str>,
    ) -> Result<(String, bool), StoreError> {
        let mut keys = self.keys.lock().expect("key lock");
        if let Some(existing) = idempotency_key.and_then(|k| keys.get(k)) {
            return Ok((existing.clone(), false));
        }
        let mut runs = self.runs.write().expect("store lock");
        if runs.contains_key(run_id) {
            if let Some(k) = idempotency_key {
                keys.insert(k.to_string(), run_id.to_string());
            }
            return Ok((run_id.to_string(), false));
        }
        let dir = self.run_dir(run_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        append_event(
            &dir,
            &Event::Created {
                run_id: run_id.to_string(),
                request: request.clone(),
                idempotency_key: idempotency_key.map(str::to_string),
                at: Utc::now(),
            },
        )?;
        if let Some(k) = idempotency_key {
            keys.insert(k.to_string(), run_id.to_string());
        }
        runs.insert(
            run_id.to_string(),
            Arc::new(Mutex::new(RunEntry {
                run_id: run_id.to_string(),
                request: request.clone(),
                status: RunStatus::Pending,
                run: None,
                error: None,
            })),
        );
        Ok((run_id.to_string(), true))
    }

    pub fn get(&self, run_id: &str) -> Result<RunEntry, StoreError> {
        Ok(self.slot(run_id)?.lock().expect("run lock").clone())
    }

    /// The run of a screened entry.
    pub fn ready_run(&self, run_id: &str) -> Result<ScreeningRun, StoreError> {
        let entry = self.get(run_id)?;
        match entry.status {
            RunStatus::Pending => Err(StoreError::Pending(run_id.to_string())),
            RunStatus::Failed => Err(StoreError::Failed {
                run_id: run_id.to_string(),
                message: entry.error.unwrap_or_default(),
            }),
            RunStatus::Ready => Ok(entry.run.expect("ready entry holds a run")),
        }
    }

    pub fn list(&self) -> Vec<RunEntry> {
        let runs = self.runs.read().expect("store lock");
        runs.values().map(|s| s.lock().expect("run lock").clone()).collect()
    }

    pub fn pending(&self) -> Vec<(String, CreateRunRequest)> {
        self.list()
            .into_iter()
            .filter(|e| e.status == RunStatus::Pending)
            .map(|e| (e.run_id, e.request))
            .collect()
    }

    pub fn record_screened(&self, run_id: &str, run: ScreeningRun) -> Result<(), StoreError> {
        let slot = self.slot(run_id)?;
        let mut entry = slot.lock().expect("run lock");
        let dir = self.run_dir(run_id);
        append_event(&dir, &Event::Screened { run: Box::new(run.clone()) })?;
        write_snapshot(&dir, &run)?;
        entry.status = RunStatus::Ready;
        entry.run = Some(run);
        Ok(())
    }

    pub fn record_failed(&self, run_id: &str, message: &str) -> Result<(), StoreError> {
        let slot = self.slot(run_id)?;
        let mut entry = slot.lock().expect("run lock");
        append_event(
            &self.run_dir(run_id),
            &Event::Failed {
                message: message.to_string(),
            },
        )?;
        entry.status = RunStatus::Failed;
        entry.error = Some(message.to_string());
        Ok(())
    }

    /// Applies a decision batch if `expected_etag` is current. Writes for
    /// one run are serialized, so of several writers holding the same etag
    /// exactly one succeeds.
    pub fn apply(
        &self,
        run_id: &str,
        decisions: &[ReviewDecision],
        expected_etag: &str,
    ) -> Result<ScreeningRun, StoreError> {
        let slot = self.slot(run_id)?;
        let mut entry = slot.lock().expect("run lock");
        let run = match (entry.status, entry.run.as_ref()) {
            (RunStatus::Ready, Some(run)) => run,
            (RunStatus::Failed, _) => {
                return Err(StoreError::Failed {
                    run_id: run_id.to_string(),
                    message: entry.error.clone().unwrap_or_default(),
                })
            }
            _ => return Err(StoreError::Pending(run_id.to_string())),
        };
        if run.etag() != expected_etag {
            return Err(StoreError::Conflict {
                expected: expected_etag.to_string(),
                current: run.etag(),
            });
        }
        let next = apply_decisions(run, decisions, run.version)?;
        let dir = self.run_dir(run_id);
        append_event(
            &dir,
            &Event::Decided {
                expected_version: run.version,
                version: next.version,
                decisions: decisions.to_vec(),
            },
        )?;
        write_snapshot(&dir, &next)?;
        entry.run = Some(next.clone());
        Ok(next)
    }
}

fn append_event(dir: &Path, event: &Event) -> Result<(), StoreError> {
    let path = dir.join("events.jsonl");
    let mut line = serde_json::to_string(event).expect("serializable event");
    line.push('\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(io_err(&path))?;
    f.write_all(line.as_bytes()).map_err(io_err(&path))?;
    f.sync_data().map_err(io_err(&path))
}

fn write_snapshot(dir: &Path, run: &ScreeningRun) -> Result<(), StoreError> {
    let path = dir.join("snapshot.json");
    write_json_atomic(&path, run).map_err(io_err(&path))
}

/// Reads a run's events, dropping and truncating a torn final line.
fn read_events(path: &Path) -> Result<Vec<Event>, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut events = Vec::new();
    let mut good_len = 0usize;
    let mut offset = 0usize;
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    for (i, raw) in lines.iter().enumerate() {
        offset += raw.len();
        let line = raw.trim();
        if line.is_empty() {
            good_len = offset;
            continue;
        }
        let complete = raw.ends_with('\n');
        match serde_json::from_str::<Event>(line) {
            Ok(e) if complete => {
                events.push(e);
                good_len = offset;
            }
            _ if i + 1 == lines.len() => {
                tracing::warn!(path = %path.display(), "dropping torn final event");
                let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
                f.set_len(good_len as u64).map_err(io_err(path))?;
                f.sync_data().map_err(io_err(path))?;
            }
            Ok(_) => unreachable!("only the final line can lack a newline"),
            Err(e) => {
                return Err(StoreError::Corrupt {
                    path: path.to_path_buf(),
                    message: format!("event {}: {e}", i + 1),
                })
            }
        }
    }
    Ok(events)
}

fn load_run(dir: &Path) -> Result<(RunEntry, Option<String>), StoreError> {
    let path = dir.join("events.jsonl");
    let corrupt = |message: String| StoreError::Corrupt {
        path: path.clone(),
        message,
    };
    let mut events = read_events(&path)?.into_iter();
    let Some(Event::Created {
        run_id,
        request,
        idempotency_key,
        ..
    }) = events.next()
    else {
        return Err(corrupt("log does not start with a created event".into()));
    };
    let mut entry = RunEntry {
        run_id,
        request,
        status: RunStatus::Pending,
        run: None,
        error: None,
    };
    let mut screened: Option<ScreeningRun> = None;
    let mut decided = Vec::new();
    for event in events {
        match event {
            Event::Created { .. } => return Err(corrupt("duplicate created event".into())),
            Event::Screened { run } => screened = Some(*run),
            Event::Decided {
                expected_version,
                version,
                decisions,
            } => decided.push((expected_version, version, decisions)),
            Event::Failed { message } => {
                entry.status = RunStatus::Failed;
                entry.error = Some(message);
            }
        }
    }
    let Some(base) = screened else {
        return Ok((entry, idempotency_key));
    };
    let final_version = decided.last().map(|d| d.1).unwrap_or(base.version);
    let snapshot = fs::read_to_string(dir.join("snapshot.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<ScreeningRun>(&t).ok())
        .filter(|s| s.run_id == entry.run_id && s.version == final_version);
    let run = match snapshot {
        Some(s) => s,
        None => {
            let mut run = base;
            for (expected, version, decisions) in &decided {
                run = apply_decisions(&run, decisions, *expected)?;
                if run.version != *version {
                    return Err(corrupt(format!("replay reached v{} where the log says v{version}", run.version)));
                }
            }
            write_snapshot(dir, &run)?;
            run
        }
    };
    entry.status = RunStatus::Ready;
    entry.run = Some(run);
    Ok((entry, idempotency_key))
}
