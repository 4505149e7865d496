//! Run export directory:
//!
//! ```text
//! run.json            run metadata (profile, parameters, state, version)
//! results.jsonl       one TrialScreeningResult per line, sorted by trial_id
//! queue.json          review queue, once built
//! decisions.jsonl     review decisions in the order they were applied
//! completions.jsonl   every completion used, sorted by prompt hash
//! ```
//!
//! The completions file doubles as a replay cache, so the directory is
//! enough to re-derive every verdict offline.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::engine::{ReviewDecision, ReviewQueue, RunState, ScreeningRun, TrialScreeningResult};
use crate::error::ExportError;
use crate::gateway::{CompletionRecord, ModelParams};
use crate::io::{jsonl_lines, write_json_atomic, write_jsonl_atomic};
use crate::model::PatientProfile;

pub const RUN_FILE: &str = "run.json";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const QUEUE_FILE: &str = "queue.json";
pub const DECISIONS_FILE: &str = "decisions.jsonl";
pub const COMPLETIONS_FILE: &str = "completions.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub profile_id: String,
    pub profile: PatientProfile,
    pub params: ModelParams,
    pub exemplar_id: String,
    #[serde(default)]
    pub combined: bool,
    #[serde(default)]
    pub prefiltered_out: Vec<String>,
    pub state: RunState,
    pub version: u64,
    pub created_at: DateTime<Utc>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ExportError> {
    jsonl_lines(path)
        .map_err(io_err(path))?
        .into_iter()
        .map(|(line, text)| {
            serde_json::from_str(&text).map_err(|e| ExportError::Format {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })
        })
        .collect()
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ExportError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| ExportError::Format {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_run_export(dir: &Path, run: &ScreeningRun, completions: &[CompletionRecord]) -> Result<(), ExportError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = RunMeta {
        run_id: run.run_id.clone(),
        profile_id: run.profile_id.clone(),
        profile: run.profile.clone(),
        params: run.params.clone(),
        exemplar_id: run.exemplar_id.clone(),
        combined: run.combined,
        prefiltered_out: run.prefiltered_out.clone(),
        state: run.state,
        version: run.version,
        created_at: run.created_at,
    };
    let mut completions = completions.to_vec();
    completions.sort_by(|a, b| a.prompt_hash.cmp(&b.prompt_hash));
    completions.dedup_by(|a, b| a.prompt_hash == b.prompt_hash);
    let path = |name: &str| -> PathBuf { dir.join(name) };
    let p = path(RESULTS_FILE);
    write_jsonl_atomic(&p, &run.results).map_err(io_err(&p))?;
    let p = path(DECISIONS_FILE);
    write_jsonl_atomic(&p, &run.decisions).map_err(io_err(&p))?;
    let p = path(COMPLETIONS_FILE);
    write_jsonl_atomic(&p, &completions).map_err(io_err(&p))?;
    let p = path(QUEUE_FILE);
    match &run.queue {
        Some(q) => write_json_atomic(&p, q).map_err(io_err(&p))?,
        None => match std::fs::remove_file(&p) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(io_err(&p)(e)),
            _ => {}
        },
    }
    // Metadata last: a directory with run.json is complete.
    let p = path(RUN_FILE);
    write_json_atomic(&p, &meta).map_err(io_err(&p))
}

pub fn read_run_export(dir: &Path) -> Result<(ScreeningRun, Vec<CompletionRecord>), ExportError> {
    let meta: RunMeta = read_json(&dir.join(RUN_FILE))?;
    let results: Vec<TrialScreeningResult> = read_jsonl(&dir.join(RESULTS_FILE))?;
    let queue_path = dir.join(QUEUE_FILE);
    let queue: Option<ReviewQueue> = if queue_path.exists() {
        Some(read_json(&queue_path)?)
    } else {
        None
    };
    let decisions_path = dir.join(DECISIONS_FILE);
    let decisions: Vec<ReviewDecision> = if decisions_path.exists() {
        read_jsonl(&decisions_path)?
    } else {
        Vec::new()
    };
    let completions_path = dir.join(COMPLETIONS_FILE);
    let completions = if completions_path.exists() {
        read_jsonl(&completions_path)?
    } else {
        Vec::new()
    };
    let run = ScreeningRun {
        run_id: meta.run_id,
        profile_id: meta.profile_id,
        profile: meta.profile,
        params: meta.params,
        exemplar_id: meta.exemplar_id,
        combined: meta.combined,
        results,
        prefiltered_out: meta.prefiltered_out,
        state: meta.state,
        version: meta.version,
        created_at: meta.created_at,
        queue,
        decisions,
    };
    Ok((run, completions))
}
