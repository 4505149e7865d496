//! Ten hand-written trials screened against all ten profiles, with a mock
//! script that disagrees with the gold annotations in a handful of places.

use trialscreen_core::criteria::CriteriaParser;
use trialscreen_core::evaluation::GoldSet;
use trialscreen_core::gateway::{MockScript, NoiseConfig};
use trialscreen_core::TrialRecord;

use crate::gold_rules::GoldRules;

const TRIALS: &str = include_str!("../data/desk_trials.jsonl");
const MOCK: &str = include_str!("../data/desk_mock.toml");
const GOLD: &str = include_str!("../data/desk_gold.toml");

/// Seeded perturbation used for the stochasticity runs.
pub const NOISE: NoiseConfig = NoiseConfig {
    seed: 20230417,
    flip_rate_t0: 0.03,
    flip_rate_t1: 0.15,
};

pub fn trials() -> Vec<TrialRecord> {
    TRIALS
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("valid desk trial"))
        .collect()
}

pub fn mock_script() -> MockScript {
    MockScript::from_toml_str(MOCK).expect("valid desk mock script")
}

pub fn noisy_mock_script() -> MockScript {
    MockScript {
        noise: Some(NOISE),
        ..mock_script()
    }
}

pub fn gold_rules() -> GoldRules {
    GoldRules::from_toml_str(GOLD).expect("valid desk gold rules")
}

pub fn gold() -> GoldSet {
    gold_rules().annotate(&crate::profiles(), &trials(), &CriteriaParser::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use trialscreen_core::demographic_prefilter;

    #[test]
    fn desk_trials_parse_except_the_registry_study() {
        let parser = CriteriaParser::default();
        let ts = trials();
        assert_eq!(ts.len(), 10);
        for t in &ts {
            t.validate().unwrap();
            let parsed = parser.parse_trial(t);
            if t.trial_id == "NCT90000110" {
                assert!(parsed.is_err());
            } else {
                let p = parsed.unwrap();
                assert!(p.inclusion.len() >= 3 && p.exclusion.len() >= 3, "{}", t.trial_id);
            }
        }
    }

    #[test]
    fn every_rule_matches_some_criterion() {
        let parser = CriteriaParser::default();
        let criteria: Vec<_> = trials()
            .iter()
            .filter_map(|t| parser.parse_trial(t).ok())
            .flat_map(|p| p.iter().cloned().collect::<Vec<_>>())
            .collect();
        let script = mock_script();
        let profiles = crate::profiles();
        for r in &script.rules {
            let hit = profiles
                .iter()
                .any(|p| criteria.iter().any(|c| script.rule_for(&p.profile_id, c) == Some(r)));
            assert!(hit, "mock rule never fires: {} {:?}", r.pattern, r.profile);
        }
        for r in &gold_rules().rules {
            let hit = criteria.iter().any(|c| {
                wildmatch::WildMatch::new_case_insensitive(&r.pattern).matches(&c.text)
                    && r.trial.as_deref() == Some(c.key.trial_id.as_str())
                    && r.section == Some(c.key.section)
            });
            assert!(hit, "gold rule never matches: {}", r.pattern);
        }
    }

    #[test]
    fn gold_has_eligible_and_ineligible_trials() {
        let g = gold();
        let eligible: usize = g.profiles.values().map(|p| p.trials.values().filter(|e| **e).count()).sum();
        let total: usize = g.profiles.values().map(|p| p.trials.len()).sum();
        assert!(eligible > 0 && eligible < total);
        // The DMD trial only admits the paediatric profile.
        let dmd = trials().into_iter().find(|t| t.trial_id == "NCT90000104").unwrap();
        let admitted: Vec<_> = crate::profiles()
            .into_iter()
            .filter(|p| demographic_prefilter(p, &dmd))
            .map(|p| p.profile_id)
            .collect();
        assert_eq!(admitted, vec!["FP006".to_string()]);
    }
}
