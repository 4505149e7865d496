//! Test and demo data for trialscreen: ten synthetic patient profiles, a
//! hand-written ten-trial desk fixture, a generated fixture shaped like a
//! full evaluation cohort, and a corpus of registry-style eligibility texts
//! with reference segmentations.

pub mod corpus;
pub mod desk;
pub mod gold_rules;
pub mod paper;

use std::path::{Path, PathBuf};

use trialscreen_core::io::{write_atomic, write_jsonl_atomic};
use trialscreen_core::PatientProfile;

const PROFILES: &str = include_str!("../data/profiles.jsonl");

/// Directory holding the fixture data files.
pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn profiles() -> Vec<PatientProfile> {
    PROFILES
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("valid profile fixture"))
        .collect()
}

pub fn profile(id: &str) -> PatientProfile {
    profiles()
        .into_iter()
        .find(|p| p.profile_id == id)
        .unwrap_or_else(|| panic!("no fixture profile {id}"))
}

/// Writes every data set as a plain file under `out`: profiles, the cohort
/// fixture (`cohort_*`) and the desk fixture (`desk_*`).
pub fn write_data_files(out: &Path) -> Result<(), Box<dyn std::error::Error>> {
    write_jsonl_atomic(&out.join("profiles.jsonl"), &profiles())?;

    let fx = paper::paper_fixture();
    write_jsonl_atomic(&out.join("cohort_trials.jsonl"), &fx.trials)?;
    write_atomic(&out.join("cohort_mock.toml"), toml::to_string(&fx.script)?.as_bytes())?;
    write_jsonl_atomic(&out.join("cohort_gold.jsonl"), &fx.gold.records())?;

    write_jsonl_atomic(&out.join("desk_trials.jsonl"), &desk::trials())?;
    write_atomic(&out.join("desk_mock.toml"), toml::to_string(&desk::mock_script())?.as_bytes())?;
    write_atomic(&out.join("desk_noise.toml"), toml::to_string(&desk::noisy_mock_script())?.as_bytes())?;
    write_jsonl_atomic(&out.join("desk_gold.jsonl"), &desk::gold().records())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_are_valid_and_unique() {
        let ps = profiles();
        assert_eq!(ps.len(), 10);
        for p in &ps {
            p.validate().unwrap();
        }
        let mut ids: Vec<_> = ps.iter().map(|p| p.profile_id.as_str()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 10);
        assert_eq!(profile("FP004").condition_code, "M0027512");
    }
}
