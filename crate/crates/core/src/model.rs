//! Domain types and the pure decision rules shared by every stage of the
//! pipeline: the dropout rule, the trial verdict and the demographic
//! prefilter.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Female,
    Male,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptedSex {
    Female,
    Male,
    #[default]
    All,
}

impl AcceptedSex {
    pub fn accepts(self, sex: Sex) -> bool {
        match self {
            AcceptedSex::All => true,
            AcceptedSex::Female => sex == Sex::Female,
            AcceptedSex::Male => sex == Sex::Male,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Recruiting,
    #[default]
    Other,
}

/// A synthetic or real patient: demographics plus the free-text summary the
/// model screens against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub profile_id: String,
    pub condition_code: String,
    pub condition_name: String,
    pub age: u32,
    pub sex: Sex,
    /// ISO 3166-1 alpha-2.
    pub country: String,
    pub medical_summary: String,
}

impl PatientProfile {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.profile_id.trim().is_empty() {
            return Err(ModelError::invalid("profile_id", "must not be empty"));
        }
        if self.medical_summary.trim().is_empty() {
            return Err(ModelError::invalid("medical_summary", "must not be empty"));
        }
        Ok(())
    }

    pub fn demographics(&self) -> Demographics {
        Demographics {
            age: Some(self.age),
            sex: Some(self.sex),
            country: Some(self.country.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub title: String,
    #[serde(default)]
    pub condition_codes: Vec<String>,
    pub eligibility_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_age: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_age: Option<u32>,
    #[serde(default)]
    pub accepted_sex: AcceptedSex,
    #[serde(default)]
    pub countries: Vec<String>,
    #[serde(default)]
    pub status: TrialStatus,
}

impl TrialRecord {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.trial_id.trim().is_empty() {
            return Err(ModelError::invalid("trial_id", "must not be empty"));
        }
        if let (Some(lo), Some(hi)) = (self.min_age, self.max_age) {
            if lo > hi {
                return Err(ModelError::invalid(
                    "min_age",
                    format!("min_age {lo} exceeds max_age {hi}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Inclusion,
    Exclusion,
}

impl Section {
    pub const ALL: [Section; 2] = [Section::Inclusion, Section::Exclusion];

    pub fn as_str(self) -> &'static str {
        match self {
            Section::Inclusion => "inclusion",
            Section::Exclusion => "exclusion",
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Stable address of one criterion. Ordering is (trial, section, ordinal),
/// which is also the source order of the eligibility text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CriterionKey {
    pub trial_id: String,
    pub section: Section,
    pub ordinal: u32,
}

impl CriterionKey {
    pub fn new(trial_id: impl Into<String>, section: Section, ordinal: u32) -> Self {
        Self {
            trial_id: trial_id.into(),
            section,
            ordinal,
        }
    }
}

impl fmt::Display for CriterionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.trial_id, self.section, self.ordinal)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criterion {
    pub key: CriterionKey,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EligibilityLabel {
    Met,
    NotMet,
    #[default]
    Unknown,
}

impl EligibilityLabel {
    pub const ALL: [EligibilityLabel; 3] = [
        EligibilityLabel::Met,
        EligibilityLabel::NotMet,
        EligibilityLabel::Unknown,
    ];

    /// The literal token used in prompts and model answers.
    pub fn token(self) -> &'static str {
        match self {
            EligibilityLabel::Met => "met",
            EligibilityLabel::NotMet => "not met",
            EligibilityLabel::Unknown => "unknown",
        }
    }
}

impl fmt::Display for EligibilityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// A not-met inclusion criterion or a met exclusion criterion.
pub fn is_dropout(section: Section, label: EligibilityLabel) -> bool {
    matches!(
        (section, label),
        (Section::Inclusion, EligibilityLabel::NotMet) | (Section::Exclusion, EligibilityLabel::Met)
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_name: String,
    pub temperature: f64,
    pub prompt_hash: String,
    pub created_at: DateTime<Utc>,
}

/// Set when a physician rejected the model's dropout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewOverride {
    pub reviewer_id: String,
    pub model_label: EligibilityLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionAssessment {
    pub key: CriterionKey,
    pub screenable: bool,
    pub reasoning: String,
    pub label: EligibilityLabel,
    pub dropout: bool,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review: Option<ReviewOverride>,
}

impl CriterionAssessment {
    /// Assessment for a criterion the model selected as screenable.
    pub fn screened(
        key: CriterionKey,
        reasoning: String,
        label: EligibilityLabel,
        provenance: Provenance,
    ) -> Self {
        let dropout = is_dropout(key.section, label);
        Self {
            key,
            screenable: true,
            reasoning,
            label,
            dropout,
            provenance,
            review: None,
        }
    }

    /// Assessment for a criterion the model did not select.
    pub fn not_screenable(key: CriterionKey, provenance: Provenance) -> Self {
        Self {
            key,
            screenable: false,
            reasoning: String::new(),
            label: EligibilityLabel::Unknown,
            dropout: false,
            provenance,
            review: None,
        }
    }

    /// The label the model produced, ignoring any physician override.
    pub fn model_label(&self) -> EligibilityLabel {
        self.review
            .as_ref()
            .map(|r| r.model_label)
            .unwrap_or(self.label)
    }

    pub fn model_dropout(&self) -> bool {
        is_dropout(self.key.section, self.model_label())
    }

    pub fn check_invariants(&self) -> Result<(), ModelError> {
        if self.dropout != is_dropout(self.key.section, self.label) {
            return Err(ModelError::Invariant(format!(
                "{}: stored dropout flag disagrees with ({}, {})",
                self.key, self.key.section, self.label
            )));
        }
        if !self.screenable && (self.label != EligibilityLabel::Unknown || !self.reasoning.is_empty()) {
            return Err(ModelError::Invariant(format!(
                "{}: not-screenable assessment carries a label or reasoning",
                self.key
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManualReason {
    ParseFailure,
    PipelineError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "value", content = "manual_reason", rename_all = "snake_case")]
pub enum TrialVerdict {
    PredictedEligible,
    PredictedIneligible,
    ManualRoute(ManualReason),
}

impl TrialVerdict {
    pub fn is_manual(self) -> bool {
        matches!(self, TrialVerdict::ManualRoute(_))
    }

    pub fn manual_reason(self) -> Option<ManualReason> {
        match self {
            TrialVerdict::ManualRoute(r) => Some(r),
            _ => None,
        }
    }
}

/// Ineligible iff any assessment is a dropout. Unknown labels never block.
pub fn trial_verdict(assessments: &[CriterionAssessment]) -> Result<TrialVerdict, ModelError> {
    if let Some(first) = assessments.first() {
        let trial_id = &first.key.trial_id;
        if let Some(other) = assessments.iter().find(|a| &a.key.trial_id != trial_id) {
            return Err(ModelError::MixedTrials {
                first: trial_id.clone(),
                other: other.key.trial_id.clone(),
            });
        }
    }
    Ok(if assessments.iter().any(|a| a.dropout) {
        TrialVerdict::PredictedIneligible
    } else {
        TrialVerdict::PredictedEligible
    })
}

/// The demographic slice used by the prefilter. `None` fields do not
/// constrain anything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    pub age: Option<u32>,
    pub sex: Option<Sex>,
    pub country: Option<String>,
}

impl Demographics {
    pub fn matches(&self, trial: &TrialRecord) -> bool {
        if let Some(age) = self.age {
            if trial.min_age.is_some_and(|lo| age < lo) || trial.max_age.is_some_and(|hi| age > hi) {
                return false;
            }
        }
        if let Some(sex) = self.sex {
            if !trial.accepted_sex.accepts(sex) {
                return false;
            }
        }
        if let Some(country) = &self.country {
            if !trial.countries.is_empty()
                && !trial.countries.iter().any(|c| c.eq_ignore_ascii_case(country))
            {
                return false;
            }
        }
        true
    }
}

/// Missing bounds and an empty country list are treated as unrestricted.
pub fn demographic_prefilter(profile: &PatientProfile, trial: &TrialRecord) -> bool {
    profile.demographics().matches(trial)
}
