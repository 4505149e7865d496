//! Service configuration and the data catalog it points at.
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! store_dir = "store"
//! max_jobs = 2            # concurrent screening jobs
//! max_parallel = 4        # completion calls per job
//!
//! [backend]
//! kind = "mock"
//! rules = "desk_mock.toml"
//!
//! [data]
//! profiles = "profiles.jsonl"
//!
//! [data.trial_sets]
//! desk = "desk_trials.jsonl"
//!
//! [data.gold_sets]
//! desk = "desk_gold.jsonl"
//! ```
//!
//! Relative paths resolve against the config file's directory. Secrets
//! such as API keys come from the environment (see `RemoteConfig`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use trialscreen_core::evaluation::GoldSet;
use trialscreen_core::gateway::BackendSpec;
use trialscreen_core::registry::{load_profiles, load_trials};
use trialscreen_core::{PatientProfile, TrialRecord};

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct DataConfig {
    pub profiles: PathBuf,
    #[serde(default)]
    pub trial_sets: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub gold_sets: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    pub store_dir: PathBuf,
    #[serde(default = "default_jobs")]
    pub max_jobs: usize,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    pub backend: BackendSpec,
    pub data: DataConfig,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_jobs() -> usize {
    2
}

fn default_parallel() -> usize {
    4
}

impl ServiceConfig {
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let cfg: ServiceConfig = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(cfg.resolve(base))
    }

    pub fn resolve(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.store_dir);
        fix(&mut self.data.profiles);
        self.data.trial_sets.values_mut().for_each(fix);
        self.data.gold_sets.values_mut().for_each(fix);
        self.backend = self.backend.resolve(base);
        self
    }
}

/// Profiles, trial sets and gold sets loaded at startup.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    pub profiles: BTreeMap<String, PatientProfile>,
    pub trial_sets: BTreeMap<String, Vec<TrialRecord>>,
    pub gold_sets: BTreeMap<String, GoldSet>,
}

impl Catalog {
    pub fn load(data: &DataConfig) -> Result<Self, String> {
        let profiles = load_profiles(&data.profiles)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|p| (p.profile_id.clone(), p))
            .collect();
        let mut trial_sets = BTreeMap::new();
        for (name, path) in &data.trial_sets {
            let (trials, _) = load_trials(path).map_err(|e| e.to_string())?;
            trial_sets.insert(name.clone(), trials);
        }
        let mut gold_sets = BTreeMap::new();
        for (name, path) in &data.gold_sets {
            gold_sets.insert(name.clone(), GoldSet::load(path).map_err(|e| e.to_string())?);
        }
        Ok(Self {
            profiles,
            trial_sets,
            gold_sets,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_resolve_against_config_dir() {
        let cfg: ServiceConfig = toml::from_str(
            r#"
store_dir = "store"
[backend]
kind = "mock"
rules = "m.toml"
[data]
profiles = "/abs/profiles.jsonl"
[data.trial_sets]
desk = "t.jsonl"
"#,
        )
        .unwrap();
        let cfg = cfg.resolve(Path::new("/etc/ts"));
        assert_eq!(cfg.store_dir, PathBuf::from("/etc/ts/store"));
        assert_eq!(cfg.data.profiles, PathBuf::from("/abs/profiles.jsonl"));
        assert_eq!(cfg.data.trial_sets["desk"], PathBuf::from("/etc/ts/t.jsonl"));
        assert_eq!(cfg.listen, "127.0.0.1:8080");
        assert_eq!(cfg.max_jobs, 2);
    }
}
