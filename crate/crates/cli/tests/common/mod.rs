#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use tempfile::TempDir;
use trialscreen_core::engine::{apply_decisions, build_review_queue, screen, EngineConfig, ScreeningRun};
use trialscreen_core::evaluation::{oracle_decisions, GoldSet};
use trialscreen_core::gateway::{CompletionBackend, ModelParams};
use trialscreen_core::{PatientProfile, TrialRecord};

/// A temp directory holding every fixture data file.
pub struct Workspace {
    pub dir: TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        trialscreen_fixtures::write_data_files(&dir.path().join("data")).unwrap();
        Self { dir }
    }

    pub fn data(&self, name: &str) -> String {
        self.path(&format!("data/{name}"))
    }

    pub fn path(&self, rel: &str) -> String {
        self.dir.path().join(rel).to_string_lossy().into_owned()
    }
}

pub fn cli(args: &[&str]) -> i32 {
    let argv = std::iter::once("trialscreen").chain(args.iter().copied());
    trialscreen::run(argv)
}

pub fn ok(args: &[&str]) {
    assert_eq!(cli(args), 0, "trialscreen {}", args.join(" "));
}

/// Relative path to file bytes for every file under `root`.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Screens, queues and applies oracle decisions without the CLI.
pub fn reviewed_in_process(
    profiles: &[PatientProfile],
    trials: &[TrialRecord],
    backend: &dyn CompletionBackend,
    gold: &GoldSet,
) -> Vec<ScreeningRun> {
    profiles
        .iter()
        .map(|p| {
            let run = screen(p, trials, &ModelParams::default(), backend, &EngineConfig::default()).unwrap();
            let run = build_review_queue(&run).unwrap();
            let batch = oracle_decisions(&run, gold, "oracle").unwrap();
            if batch.is_empty() && run.queue.as_ref().unwrap().pending() > 0 {
                run
            } else {
                apply_decisions(&run, &batch, run.version).unwrap()
            }
        })
        .collect()
}
