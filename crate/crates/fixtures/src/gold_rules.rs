//! Gold annotations written as glob rules over criterion text.
//!
//! ```toml
//! [[rule]]
//! pattern = "ECOG*"
//! trial = "NCT90000101"      # optional glob
//! profile = "FP002"          # optional glob
//! section = "inclusion"      # optional
//! screenable = true
//! label = "not_met"
//! error_pattern = "F"        # optional: D | E | F
//! ```
//!
//! The first matching rule wins. Unmatched criteria are annotated as not
//! screenable with label unknown. A trial is gold eligible when none of its
//! annotated criteria is a dropout.

use std::path::Path;

use serde::{Deserialize, Serialize};
use trialscreen_core::criteria::CriteriaParser;
use trialscreen_core::evaluation::{CriterionGold, ErrorPattern, GoldRecord, GoldSet, TrialGold};
use trialscreen_core::{demographic_prefilter, Criterion, EligibilityLabel, PatientProfile, Section, TrialRecord};
use wildmatch::WildMatch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRule {
    pub pattern: String,
    #[serde(default)]
    pub trial: Option<String>,
    #[serde(default)]
    pub profile: Option<String>,
    #[serde(default)]
    pub section: Option<Section>,
    pub screenable: bool,
    #[serde(default)]
    pub label: EligibilityLabel,
    #[serde(default)]
    pub error_pattern: ErrorPattern,
}

impl GoldRule {
    fn matches(&self, profile_id: &str, criterion: &Criterion) -> bool {
        let glob = |p: &str, s: &str| WildMatch::new_case_insensitive(p).matches(s);
        glob(&self.pattern, &criterion.text)
            && self.trial.as_deref().is_none_or(|p| glob(p, &criterion.key.trial_id))
            && self.profile.as_deref().is_none_or(|p| glob(p, profile_id))
            && self.section.is_none_or(|s| s == criterion.key.section)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GoldRules {
    #[serde(default, rename = "rule")]
    pub rules: Vec<GoldRule>,
}

impl GoldRules {
    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml_str(&text)
    }

    pub fn annotate_criterion(&self, profile_id: &str, criterion: &Criterion) -> CriterionGold {
        let rule = self.rules.iter().find(|r| r.matches(profile_id, criterion));
        CriterionGold {
            profile_id: profile_id.to_string(),
            key: criterion.key.clone(),
            gold_screenable: rule.is_some_and(|r| r.screenable),
            gold_label: rule.map(|r| r.label).unwrap_or_default(),
            error_pattern: rule.map(|r| r.error_pattern).unwrap_or_default(),
        }
    }

    /// Gold for every profile and trial pair that passes the demographic
    /// prefilter and segments cleanly. Trials that fail to parse go to manual
    /// review and carry no gold.
    pub fn annotate(&self, profiles: &[PatientProfile], trials: &[TrialRecord], parser: &CriteriaParser) -> GoldSet {
        let mut records = Vec::new();
        for profile in profiles {
            for trial in trials.iter().filter(|t| demographic_prefilter(profile, t)) {
                let Ok(parsed) = parser.parse_trial(trial) else {
                    continue;
                };
                let golds: Vec<CriterionGold> = parsed
                    .iter()
                    .map(|c| self.annotate_criterion(&profile.profile_id, c))
                    .collect();
                let eligible = !golds.iter().any(CriterionGold::dropout);
                records.push(GoldRecord::Trial(TrialGold {
                    profile_id: profile.profile_id.clone(),
                    trial_id: trial.trial_id.clone(),
                    gold_eligible: eligible,
                }));
                records.extend(golds.into_iter().map(GoldRecord::Criterion));
            }
        }
        GoldSet::from_records(records).expect("rule-derived gold is consistent")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use trialscreen_core::CriterionKey;

    #[test]
    fn first_match_wins_and_default_is_unscreenable() {
        let rules = GoldRules::from_toml_str(
            r#"
[[rule]]
pattern = "ECOG*"
profile = "FP002"
screenable = true
label = "not_met"
error_pattern = "F"

[[rule]]
pattern = "ECOG*"
screenable = true
label = "met"
"#,
        )
        .unwrap();
        let c = Criterion {
            key: CriterionKey::new("NCT1", Section::Inclusion, 0),
            text: "ECOG 0 or 1".into(),
        };
        let g = rules.annotate_criterion("FP002", &c);
        assert!(g.gold_screenable && g.dropout());
        assert_eq!(g.error_pattern, ErrorPattern::F);
        let g = rules.annotate_criterion("FP003", &c);
        assert_eq!(g.gold_label, EligibilityLabel::Met);
        let other = Criterion {
            text: "Hepatitis".into(),
            ..c
        };
        let g = rules.annotate_criterion("FP003", &other);
        assert!(!g.gold_screenable);
        assert_eq!(g.gold_label, EligibilityLabel::Unknown);
    }
}
