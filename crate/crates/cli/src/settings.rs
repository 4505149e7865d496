//! Defaults read from the `--config` file. Flags always win.
//!
//! ```toml
//! profiles = "data/profiles.jsonl"
//! trials = "data/trials.jsonl"
//! max_parallel = 8
//!
//! [backend]
//! kind = "mock"
//! rules = "mock.toml"
//!
//! [evaluate]          # per-subcommand values override the top level
//! out = "reports"
//! ```
//! Relative paths are taken from the config file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use trialscreen_core::gateway::BackendSpec;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    pub profiles: Option<PathBuf>,
    pub trials: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    pub parser_rules: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub temperatures: Option<Vec<f64>>,
    pub max_output_tokens: Option<u32>,
    pub max_parallel: Option<usize>,
    pub max_results: Option<usize>,
    pub max_in_flight: Option<usize>,
    pub runs: Option<usize>,
    pub combined: Option<bool>,
    pub match_condition: Option<bool>,
    pub backend: Option<BackendSpec>,
}

macro_rules! overlay {
    ($top:expr, $section:expr, $($field:ident),+) => {
        Defaults { $($field: $section.$field.or($top.$field),)+ }
    };
}

impl Defaults {
    fn overlay(self, section: Defaults) -> Defaults {
        overlay!(
            self,
            section,
            profiles,
            trials,
            gold,
            registry,
            parser_rules,
            out,
            model,
            temperature,
            temperatures,
            max_output_tokens,
            max_parallel,
            max_results,
            max_in_flight,
            runs,
            combined,
            match_condition,
            backend
        )
    }

    fn resolve(mut self, base: &Path) -> Defaults {
        for p in [
            &mut self.profiles,
            &mut self.trials,
            &mut self.gold,
            &mut self.registry,
            &mut self.parser_rules,
            &mut self.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        self.backend = self.backend.map(|b| b.resolve(base));
        self
    }
}

const SECTIONS: [&str; 6] = ["ingest", "parse", "screen", "queue", "evaluate", "stochasticity"];

/// Loads the defaults that apply to `command`.
pub fn load(path: &Path, command: &str) -> Result<Defaults, CliError> {
    let bad = |e: &dyn std::fmt::Display| CliError::usage(format!("config {}: {e}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| bad(&e))?;
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| bad(&e))?;
    let mut sections = Vec::new();
    for name in SECTIONS {
        sections.push((name, table.remove(name)));
    }
    let top: Defaults = toml::Value::Table(table).try_into().map_err(|e| bad(&e))?;
    let mut merged = top;
    for (name, value) in sections {
        let section: Defaults = match value {
            Some(v) => v.try_into().map_err(|e| bad(&format!("[{name}]: {e}")))?,
            None => Defaults::default(),
        };
        if name == command {
            merged = merged.overlay(section);
        }
    }
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(merged.resolve(base))
}
