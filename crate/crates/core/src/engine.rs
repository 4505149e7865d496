//! The screening workflow: prefilter, parse, select, reason, label and
//! decide; then the physician review queue and its decisions.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::criteria::CriteriaParser;
use crate::error::{EngineError, GatewayError};
use crate::evaluation::Ratio;
use crate::gateway::{parse_label, parse_selection, CompletionBackend, CompletionRecord, ModelParams, PromptBuilder};
use crate::model::{
    demographic_prefilter, is_dropout, trial_verdict, Criterion, CriterionAssessment, CriterionKey, EligibilityLabel,
    ManualReason, PatientProfile, Provenance, ReviewOverride, TrialRecord, TrialVerdict,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Screened,
    InReview,
    Finalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticCode {
    /// The criteria parser noted something (folded sub-item, lead-in, ...).
    Parser,
    ParseFailure,
    SelectionUnparseable,
    SelectionOutOfRange,
    /// No label token in the labeling answer; the label became unknown.
    LabelUnparseable,
    PipelineError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialDiagnostic {
    pub code: DiagnosticCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<CriterionKey>,
    pub detail: String,
}

/// A physician's resolution of a manual-route trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManualResolution {
    pub eligible: bool,
    pub reviewer_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialScreeningResult {
    pub trial_id: String,
    #[serde(default)]
    pub trial_title: String,
    pub verdict: TrialVerdict,
    pub assessments: Vec<CriterionAssessment>,
    pub dropout_keys: Vec<CriterionKey>,
    /// Parsed criteria, empty when parsing failed.
    #[serde(default)]
    pub criteria: Vec<Criterion>,
    #[serde(default)]
    pub diagnostics: Vec<TrialDiagnostic>,
    /// Predicted eligible although every criterion is unknown.
    #[serde(default)]
    pub all_unknown: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual_resolution: Option<ManualResolution>,
}

impl TrialScreeningResult {
    fn manual(trial: &TrialRecord, reason: ManualReason, criteria: Vec<Criterion>, diagnostics: Vec<TrialDiagnostic>) -> Self {
        Self {
            trial_id: trial.trial_id.clone(),
            trial_title: trial.title.clone(),
            verdict: TrialVerdict::ManualRoute(reason),
            assessments: Vec::new(),
            dropout_keys: Vec::new(),
            criteria,
            diagnostics,
            all_unknown: false,
            manual_resolution: None,
        }
    }

    /// Recomputes the verdict, dropout keys and all-unknown flag from the
    /// assessments. Manual-route verdicts are left alone.
    pub fn recompute(&mut self) -> Result<(), EngineError> {
        if self.verdict.is_manual() {
            return Ok(());
        }
        self.verdict = trial_verdict(&self.assessments)?;
        self.dropout_keys = self
            .assessments
            .iter()
            .filter(|a| a.dropout)
            .map(|a| a.key.clone())
            .collect();
        self.all_unknown = self.verdict == TrialVerdict::PredictedEligible
            && !self.assessments.is_empty()
            && self.assessments.iter().all(|a| a.label == EligibilityLabel::Unknown);
        Ok(())
    }

    /// Eligibility after review: the physician's call for manual trials,
    /// the verdict otherwise.
    pub fn eligible(&self) -> Option<bool> {
        match self.verdict {
            TrialVerdict::PredictedEligible => Some(true),
            TrialVerdict::PredictedIneligible => Some(false),
            TrialVerdict::ManualRoute(_) => self.manual_resolution.as_ref().map(|r| r.eligible),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    #[default]
    Pending,
    Confirmed,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub criterion: Criterion,
    /// The model's assessment as it was when the queue was built.
    pub assessment: CriterionAssessment,
    pub trial_title: String,
    /// Profile id whose summary the reviewer reads next to the reasoning.
    pub profile_summary_ref: String,
    #[serde(default)]
    pub status: ItemStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManualTrial {
    pub trial_id: String,
    pub trial_title: String,
    pub reason: ManualReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<ManualResolution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewQueue {
    pub run_id: String,
    pub profile_id: String,
    pub profile_summary: String,
    pub items: Vec<QueueItem>,
    pub manual_trials: Vec<ManualTrial>,
}

impl ReviewQueue {
    pub fn pending(&self) -> usize {
        self.items.iter().filter(|i| i.status == ItemStatus::Pending).count()
            + self.manual_trials.iter().filter(|m| m.resolution.is_none()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionTarget {
    Criterion(CriterionKey),
    Trial(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionAction {
    ConfirmDropout,
    RejectDropout,
    ConfirmTrialEligible,
    ConfirmTrialIneligible,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub target: DecisionTarget,
    pub action: DecisionAction,
    pub reviewer_id: String,
    #[serde(default)]
    pub note: String,
    pub timestamp: DateTime<Utc>,
    /// Label recorded on rejection; defaults to unknown. Must not be a
    /// dropout label for the criterion's section.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_label: Option<EligibilityLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningRun {
    pub run_id: String,
    pub profile_id: String,
    pub profile: PatientProfile,
    pub params: ModelParams,
    pub exemplar_id: String,
    #[serde(default)]
    pub combined: bool,
    pub results: Vec<TrialScreeningResult>,
    /// Trials removed by the demographic prefilter.
    #[serde(default)]
    pub prefiltered_out: Vec<String>,
    pub state: RunState,
    pub version: u64,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue: Option<ReviewQueue>,
    #[serde(default)]
    pub decisions: Vec<ReviewDecision>,
}

impl ScreeningRun {
    pub fn etag(&self) -> String {
        format!("\"{}-v{}\"", self.run_id, self.version)
    }

    pub fn result(&self, trial_id: &str) -> Option<&TrialScreeningResult> {
        self.results
            .binary_search_by(|r| r.trial_id.as_str().cmp(trial_id))
            .ok()
            .map(|i| &self.results[i])
    }

    pub fn evaluated(&self) -> impl Iterator<Item = &TrialScreeningResult> {
        self.results.iter().filter(|r| !r.verdict.is_manual())
    }

    pub fn manual(&self) -> impl Iterator<Item = &TrialScreeningResult> {
        self.results.iter().filter(|r| r.verdict.is_manual())
    }

    pub fn assessments(&self) -> impl Iterator<Item = &CriterionAssessment> {
        self.results.iter().flat_map(|r| r.assessments.iter())
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Trials screened at once.
    pub max_parallel: usize,
    /// Reasoning and label from one call instead of two.
    pub combined: bool,
    pub prefilter: bool,
    pub builder: PromptBuilder,
    pub parser: CriteriaParser,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_parallel: 4,
            combined: false,
            prefilter: true,
            builder: PromptBuilder::default(),
            parser: CriteriaParser::default(),
        }
    }
}

/// Content-derived run id: same profile, trials, parameters and prompt
/// setup give the same id.
pub fn derive_run_id(profile: &PatientProfile, trials: &[TrialRecord], params: &ModelParams, config: &EngineConfig) -> String {
    let mut h = Sha256::new();
    let mut feed = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    feed(&serde_json::to_vec(profile).expect("profile serializes"));
    feed(&serde_json::to_vec(params).expect("params serialize"));
    feed(config.builder.exemplar().id.as_bytes());
    feed(&[config.combined as u8, config.prefilter as u8]);
    let mut sorted: Vec<&TrialRecord> = trials.iter().collect();
    sorted.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    for t in sorted {
        feed(&serde_json::to_vec(t).expect("trial serializes"));
    }
    format!("run-{}", &hex::encode(h.finalize())[..16])
}

struct TrialJob<'a> {
    profile: &'a PatientProfile,
    params: &'a ModelParams,
    backend: &'a dyn CompletionBackend,
    config: &'a EngineConfig,
}

fn provenance(params: &ModelParams, record: &CompletionRecord) -> Provenance {
    Provenance {
        model_name: params.model_name.clone(),
        temperature: params.temperature,
        prompt_hash: record.prompt_hash.clone(),
        created_at: record.created_at,
    }
}

impl TrialJob<'_> {
    fn run(&self, trial: &TrialRecord) -> TrialScreeningResult {
        let parsed = match self.config.parser.parse_trial(trial) {
            Ok(p) => p,
            Err(failure) => {
                let diag = TrialDiagnostic {
                    code: DiagnosticCode::ParseFailure,
                    key: None,
                    detail: format!("{:?}: {}", failure.reason, failure.detail),
                };
                return TrialScreeningResult::manual(trial, ManualReason::ParseFailure, Vec::new(), vec![diag]);
            }
        };
        let mut diagnostics: Vec<TrialDiagnostic> = parsed
            .diagnostics
            .iter()
            .map(|d| TrialDiagnostic {
                code: DiagnosticCode::Parser,
                key: None,
                detail: format!("{:?} line {}: {}", d.kind, d.line, d.detail),
            })
            .collect();
        let criteria: Vec<Criterion> = parsed.iter().cloned().collect();
        match self.assess(&parsed.inclusion, &parsed.exclusion, &mut diagnostics) {
            Ok(mut assessments) => {
                assessments.sort_by(|a, b| a.key.cmp(&b.key));
                let mut result = TrialScreeningResult {
                    trial_id: trial.trial_id.clone(),
                    trial_title: trial.title.clone(),
                    verdict: TrialVerdict::PredictedEligible,
                    assessments,
                    dropout_keys: Vec::new(),
                    criteria,
                    diagnostics,
                    all_unknown: false,
                    manual_resolution: None,
                };
                if let Err(e) = result.recompute() {
                    return TrialScreeningResult::manual(
                        trial,
                        ManualReason::PipelineError,
                        result.criteria,
                        vec![pipeline_diag(e.to_string())],
                    );
                }
                result
            }
            Err(e) => {
                tracing::warn!(trial = %trial.trial_id, error = %e, "trial routed to manual review");
                diagnostics.push(pipeline_diag(e.to_string()));
                TrialScreeningResult::manual(trial, ManualReason::PipelineError, criteria, diagnostics)
            }
        }
    }

    fn assess(
        &self,
        inclusion: &[Criterion],
        exclusion: &[Criterion],
        diagnostics: &mut Vec<TrialDiagnostic>,
    ) -> Result<Vec<CriterionAssessment>, GatewayError> {
        let mut out = Vec::new();
        let mut selected = Vec::new();
        for section in [inclusion, exclusion] {
            if section.is_empty() {
                continue;
            }
            for bundle in self.config.builder.build_selection_prompts(self.profile, section)? {
                let record = self.backend.complete(&bundle, self.params)?;
                let offered: Vec<u32> = bundle.criterion_keys.iter().map(|k| k.ordinal).collect();
                let parse = parse_selection(&record.raw_response, &offered);
                let first = bundle.criterion_keys[0].clone();
                if parse.unparseable {
                    diagnostics.push(TrialDiagnostic {
                        code: DiagnosticCode::SelectionUnparseable,
                        key: Some(first.clone()),
                        detail: "selection answer had no criterion numbers; batch treated as not screenable".into(),
                    });
                }
                if !parse.out_of_range.is_empty() {
                    diagnostics.push(TrialDiagnostic {
                        code: DiagnosticCode::SelectionOutOfRange,
                        key: Some(first),
                        detail: format!("ignored numbers outside the offered set: {:?}", parse.out_of_range),
                    });
                }
                let picked: BTreeSet<u32> = parse.selected.into_iter().collect();
                for c in &bundle.context.criteria {
                    if picked.contains(&c.key.ordinal) {
                        selected.push(c.clone());
                    } else {
                        out.push(CriterionAssessment::not_screenable(
                            c.key.clone(),
                            provenance(self.params, &record),
                        ));
                    }
                }
            }
        }
        let labelled: Vec<Result<(CriterionAssessment, Option<TrialDiagnostic>), GatewayError>> =
            selected.par_iter().map(|c| self.label(c)).collect();
        for item in labelled {
            let (assessment, diag) = item?;
            out.push(assessment);
            diagnostics.extend(diag);
        }
        Ok(out)
    }

    fn label(&self, c: &Criterion) -> Result<(CriterionAssessment, Option<TrialDiagnostic>), GatewayError> {
        let builder = &self.config.builder;
        let (reasoning, answer) = if self.config.combined {
            let record = self.backend.complete(&builder.build_combined_prompt(self.profile, c)?, self.params)?;
            (record.raw_response.trim().to_string(), record)
        } else {
            let r = self.backend.complete(&builder.build_reasoning_prompt(self.profile, c)?, self.params)?;
            let reasoning = r.raw_response.trim().to_string();
            let l = self
                .backend
                .complete(&builder.build_labeling_prompt(&reasoning, c)?, self.params)?;
            (reasoning, l)
        };
        let (label, diag) = match parse_label(&answer.raw_response) {
            Ok(label) => (label, None),
            Err(_) => (
                EligibilityLabel::Unknown,
                Some(TrialDiagnostic {
                    code: DiagnosticCode::LabelUnparseable,
                    key: Some(c.key.clone()),
                    detail: format!("no label token in {:?}", truncate(&answer.raw_response, 120)),
                }),
            ),
        };
        Ok((
            CriterionAssessment::screened(c.key.clone(), reasoning, label, provenance(self.params, &answer)),
            diag,
        ))
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

fn pipeline_diag(detail: String) -> TrialDiagnostic {
    TrialDiagnostic {
        code: DiagnosticCode::PipelineError,
        key: None,
        detail,
    }
}

/// Screens one profile against a set of trials. Backend failures route the
/// affected trial to manual review; the run itself always completes.
pub fn screen(
    profile: &PatientProfile,
    trials: &[TrialRecord],
    params: &ModelParams,
    backend: &dyn CompletionBackend,
    config: &EngineConfig,
) -> Result<ScreeningRun, EngineError> {
    profile.validate()?;
    params.validate().map_err(|e| EngineError::Validation(e.to_string()))?;
    let mut seen = BTreeSet::new();
    for t in trials {
        t.validate()?;
        if !seen.insert(t.trial_id.as_str()) {
            return Err(EngineError::Validation(format!("duplicate trial_id {}", t.trial_id)));
        }
    }
    let (kept, dropped): (Vec<&TrialRecord>, Vec<&TrialRecord>) = trials
        .iter()
        .partition(|t| !config.prefilter || demographic_prefilter(profile, t));
    let job = TrialJob {
        profile,
        params,
        backend,
        config,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.max_parallel.max(1))
        .build()
        .map_err(|e| EngineError::Validation(format!("thread pool: {e}")))?;
    let mut results: Vec<TrialScreeningResult> = pool.install(|| kept.par_iter().map(|t| job.run(t)).collect());
    results.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    let mut prefiltered_out: Vec<String> = dropped.iter().map(|t| t.trial_id.clone()).collect();
    prefiltered_out.sort();
    let created_at = results
        .iter()
        .flat_map(|r| r.assessments.iter().map(|a| a.provenance.created_at))
        .max()
        .unwrap_or(DateTime::<Utc>::UNIX_EPOCH);
    Ok(ScreeningRun {
        run_id: derive_run_id(profile, trials, params, config),
        profile_id: profile.profile_id.clone(),
        profile: profile.clone(),
        params: params.clone(),
        exemplar_id: config.builder.exemplar().id.clone(),
        combined: config.combined,
        results,
        prefiltered_out,
        state: RunState::Screened,
        version: 1,
        created_at,
        queue: None,
        decisions: Vec::new(),
    })
}

/// Queues every dropout criterion and every manual-route trial, moving the
/// run into review.
pub fn build_review_queue(run: &ScreeningRun) -> Result<ScreeningRun, EngineError> {
    if run.state != RunState::Screened {
        return Err(EngineError::State {
            actual: run.state,
            expected: "screened",
        });
    }
    let mut items = Vec::new();
    let mut manual_trials = Vec::new();
    for r in &run.results {
        if let Some(reason) = r.verdict.manual_reason() {
            manual_trials.push(ManualTrial {
                trial_id: r.trial_id.clone(),
                trial_title: r.trial_title.clone(),
                reason,
                resolution: None,
            });
            continue;
        }
        let texts: BTreeMap<&CriterionKey, &str> = r.criteria.iter().map(|c| (&c.key, c.text.as_str())).collect();
        for a in r.assessments.iter().filter(|a| a.dropout) {
            items.push(QueueItem {
                criterion: Criterion {
                    key: a.key.clone(),
                    text: texts.get(&a.key).copied().unwrap_or_default().to_string(),
                },
                assessment: a.clone(),
                trial_title: r.trial_title.clone(),
                profile_summary_ref: run.profile_id.clone(),
                status: ItemStatus::Pending,
            });
        }
    }
    let mut next = run.clone();
    next.queue = Some(ReviewQueue {
        run_id: run.run_id.clone(),
        profile_id: run.profile_id.clone(),
        profile_summary: run.profile.medical_summary.clone(),
        items,
        manual_trials,
    });
    next.state = RunState::InReview;
    next.version += 1;
    Ok(next)
}

/// Applies a batch of decisions atomically: either every decision is valid
/// and the new run is returned, or nothing changes. An empty batch only
/// finalizes a run that has nothing left to decide.
pub fn apply_decisions(
    run: &ScreeningRun,
    decisions: &[ReviewDecision],
    expected_version: u64,
) -> Result<ScreeningRun, EngineError> {
    if run.state != RunState::InReview {
        return Err(EngineError::State {
            actual: run.state,
            expected: "in_review",
        });
    }
    if run.version != expected_version {
        return Err(EngineError::Conflict {
            expected: expected_version,
            actual: run.version,
        });
    }
    let mut next = run.clone();
    let queue = next.queue.as_mut().ok_or_else(|| EngineError::Validation("run has no review queue".into()))?;
    let mut touched = BTreeSet::new();
    for d in decisions {
        if d.reviewer_id.trim().is_empty() {
            return Err(EngineError::Validation("reviewer_id must not be empty".into()));
        }
        if !touched.insert(d.target.clone()) {
            return Err(EngineError::Validation(format!("{:?} decided twice in one batch", d.target)));
        }
        match (&d.target, d.action) {
            (DecisionTarget::Criterion(key), DecisionAction::ConfirmDropout | DecisionAction::RejectDropout) => {
                let item = queue
                    .items
                    .iter_mut()
                    .find(|i| &i.criterion.key == key)
                    .ok_or_else(|| EngineError::Validation(format!("{key} is not in the review queue")))?;
                if item.status != ItemStatus::Pending {
                    return Err(EngineError::Validation(format!("{key} was already decided")));
                }
                if d.action == DecisionAction::ConfirmDropout {
                    item.status = ItemStatus::Confirmed;
                    continue;
                }
                let corrected = d.corrected_label.unwrap_or(EligibilityLabel::Unknown);
                if is_dropout(key.section, corrected) {
                    return Err(EngineError::Validation(format!(
                        "corrected label `{corrected}` would keep {key} a dropout"
                    )));
                }
                item.status = ItemStatus::Rejected;
                let result = next
                    .results
                    .iter_mut()
                    .find(|r| r.trial_id == key.trial_id)
                    .ok_or_else(|| EngineError::Validation(format!("no result for trial {}", key.trial_id)))?;
                let a = result
                    .assessments
                    .iter_mut()
                    .find(|a| &a.key == key)
                    .ok_or_else(|| EngineError::Validation(format!("no assessment for {key}")))?;
                a.review = Some(ReviewOverride {
                    reviewer_id: d.reviewer_id.clone(),
                    model_label: a.label,
                });
                a.label = corrected;
                a.dropout = is_dropout(key.section, corrected);
                result.recompute()?;
            }
            (
                DecisionTarget::Trial(trial_id),
                DecisionAction::ConfirmTrialEligible | DecisionAction::ConfirmTrialIneligible,
            ) => {
                let manual = queue
                    .manual_trials
                    .iter_mut()
                    .find(|m| &m.trial_id == trial_id)
                    .ok_or_else(|| EngineError::Validation(format!("{trial_id} is not a manual-route trial")))?;
                if manual.resolution.is_some() {
                    return Err(EngineError::Validation(format!("{trial_id} was already decided")));
                }
                let resolution = ManualResolution {
                    eligible: d.action == DecisionAction::ConfirmTrialEligible,
                    reviewer_id: d.reviewer_id.clone(),
                };
                manual.resolution = Some(resolution.clone());
                if let Some(r) = next.results.iter_mut().find(|r| &r.trial_id == trial_id) {
                    r.manual_resolution = Some(resolution);
                }
            }
            (target, action) => {
                return Err(EngineError::Validation(format!("{action:?} does not apply to {target:?}")));
            }
        }
    }
    if decisions.is_empty() && queue.pending() > 0 {
        return Err(EngineError::Validation("empty decision batch".into()));
    }
    if queue.pending() == 0 {
        next.state = RunState::Finalized;
    }
    next.decisions.extend(decisions.iter().cloned());
    next.version += 1;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadStats {
    pub queued_criteria: usize,
    pub total_criteria: usize,
    pub fraction: Ratio,
    pub manual_trials: usize,
}

/// Criteria a physician must read versus all criteria of evaluated trials.
pub fn workload_stats(run: &ScreeningRun) -> Result<WorkloadStats, EngineError> {
    let queue = match (&run.queue, run.state) {
        (Some(q), RunState::InReview | RunState::Finalized) => q,
        _ => {
            return Err(EngineError::State {
                actual: run.state,
                expected: "in_review or finalized",
            })
        }
    };
    let total: usize = run.evaluated().map(|r| r.assessments.len()).sum();
    Ok(WorkloadStats {
        queued_criteria: queue.items.len(),
        total_criteria: total,
        fraction: Ratio::new(queue.items.len() as u64, total as u64),
        manual_trials: queue.manual_trials.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, MockScript};
    use crate::model::{AcceptedSex, Section, Sex, TrialStatus};

    const RULES: &str = r#"
[[rule]]
pattern = "*[met]*"
label = "met"
[[rule]]
pattern = "*[not met]*"
label = "not_met"
[[rule]]
pattern = "*[unknown]*"
label = "unknown"
[[rule]]
pattern = "*[boom]*"
fail = "labeling"
"#;

    fn backend() -> MockBackend {
        MockBackend::new(MockScript::from_toml_str(RULES).unwrap())
    }

    fn profile() -> PatientProfile {
        PatientProfile {
            profile_id: "FP001".into(),
            condition_code: "M1".into(),
            condition_name: "c".into(),
            age: 54,
            sex: Sex::Female,
            country: "NL".into(),
            medical_summary: "54-year-old woman with cervical cancer.".into(),
        }
    }

    fn trial(id: &str, text: &str) -> TrialRecord {
        TrialRecord {
            trial_id: id.into(),
            title: format!("Trial {id}"),
            condition_codes: vec!["M1".into()],
            eligibility_text: text.into(),
            min_age: None,
            max_age: None,
            accepted_sex: AcceptedSex::All,
            countries: vec![],
            status: TrialStatus::Recruiting,
        }
    }

    fn run_of(trials: &[TrialRecord]) -> ScreeningRun {
        screen(&profile(), trials, &ModelParams::default(), &backend(), &EngineConfig::default()).unwrap()
    }

    fn decision(target: DecisionTarget, action: DecisionAction) -> ReviewDecision {
        ReviewDecision {
            target,
            action,
            reviewer_id: "dr-a".into(),
            note: String::new(),
            timestamp: DateTime::<Utc>::UNIX_EPOCH,
            corrected_label: None,
        }
    }

    #[test]
    fn single_met_criterion_is_eligible() {
        let run = run_of(&[trial("NCT1", "Inclusion Criteria:\n- Adult [met]")]);
        let r = &run.results[0];
        assert_eq!(r.verdict, TrialVerdict::PredictedEligible);
        assert_eq!(r.assessments.len(), 1);
        assert!(r.assessments[0].screenable);
        assert_eq!(r.assessments[0].label, EligibilityLabel::Met);
    }

    #[test]
    fn not_met_inclusion_drops_the_trial() {
        let run = run_of(&[trial(
            "NCT1",
            "Inclusion Criteria:\n- Adult [not met]\n- Other\nExclusion Criteria:\n- Pregnant [unknown]",
        )]);
        let r = &run.results[0];
        assert_eq!(r.verdict, TrialVerdict::PredictedIneligible);
        assert_eq!(r.dropout_keys, [CriterionKey::new("NCT1", Section::Inclusion, 0)]);
        assert_eq!(r.assessments.len(), 3);
        let unselected = &r.assessments[1];
        assert!(!unselected.screenable && unselected.label == EligibilityLabel::Unknown);
        for a in &r.assessments {
            a.check_invariants().unwrap();
        }
    }

    #[test]
    fn parse_and_backend_failures_route_to_manual() {
        let run = run_of(&[
            trial("NCT1", "No structure at all"),
            trial("NCT2", "Inclusion Criteria:\n- a [met]\n- b [boom]"),
            trial("NCT3", "Inclusion Criteria:\n- a [met]"),
        ]);
        assert_eq!(run.results[0].verdict, TrialVerdict::ManualRoute(ManualReason::ParseFailure));
        assert_eq!(run.results[1].verdict, TrialVerdict::ManualRoute(ManualReason::PipelineError));
        assert!(run.results[1].assessments.is_empty());
        assert!(run.results[1]
            .diagnostics
            .iter()
            .any(|d| d.code == DiagnosticCode::PipelineError));
        assert_eq!(run.results[2].verdict, TrialVerdict::PredictedEligible);
    }

    #[test]
    fn prefilter_and_ordering() {
        let mut young = trial("NCT0", "Inclusion Criteria:\n- a [met]");
        young.max_age = Some(30);
        let run = run_of(&[trial("NCT9", "Inclusion Criteria:\n- a"), young, trial("NCT5", "Inclusion Criteria:\n- a")]);
        assert_eq!(run.prefiltered_out, ["NCT0"]);
        let ids: Vec<_> = run.results.iter().map(|r| r.trial_id.as_str()).collect();
        assert_eq!(ids, ["NCT5", "NCT9"]);
    }

    #[test]
    fn all_unknown_is_flagged() {
        let run = run_of(&[trial("NCT1", "Inclusion Criteria:\n- a [unknown]\n- b")]);
        assert!(run.results[0].all_unknown);
        assert_eq!(run.results[0].verdict, TrialVerdict::PredictedEligible);
    }

    #[test]
    fn parallelism_does_not_change_output() {
        let trials: Vec<_> = (0..12)
            .map(|i| trial(&format!("NCT{i:02}"), "Inclusion Criteria:\n- a [met]\n- b [not met]\nExclusion Criteria:\n- c [met]"))
            .collect();
        let serial = EngineConfig {
            max_parallel: 1,
            ..EngineConfig::default()
        };
        let wide = EngineConfig {
            max_parallel: 8,
            ..EngineConfig::default()
        };
        let a = screen(&profile(), &trials, &ModelParams::default(), &backend(), &serial).unwrap();
        let b = screen(&profile(), &trials, &ModelParams::default(), &backend(), &wide).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn combined_mode_matches_staged_labels() {
        let trials = [trial("NCT1", "Inclusion Criteria:\n- a [met]\n- b [not met]")];
        let combined = EngineConfig {
            combined: true,
            ..EngineConfig::default()
        };
        let a = run_of(&trials);
        let b = screen(&profile(), &trials, &ModelParams::default(), &backend(), &combined).unwrap();
        let labels = |r: &ScreeningRun| r.results[0].assessments.iter().map(|a| a.label).collect::<Vec<_>>();
        assert_eq!(labels(&a), labels(&b));
        assert_ne!(a.run_id, b.run_id);
    }

    #[test]
    fn queue_holds_dropouts_and_manual_trials() {
        let run = run_of(&[
            trial("NCT1", "Inclusion Criteria:\n- a [not met]\nExclusion Criteria:\n- b [met]\n- c [not met]"),
            trial("NCT2", "garbage"),
            trial("NCT3", "also garbage"),
        ]);
        let reviewed = build_review_queue(&run).unwrap();
        let q = reviewed.queue.as_ref().unwrap();
        assert_eq!(q.items.len(), 2);
        assert_eq!(q.manual_trials.len(), 2);
        assert_eq!(q.items[1].criterion.text, "b [met]");
        assert_eq!(reviewed.state, RunState::InReview);
        assert_eq!(reviewed.version, 2);
        assert!(matches!(build_review_queue(&reviewed), Err(EngineError::State { .. })));
        let w = workload_stats(&reviewed).unwrap();
        assert_eq!((w.queued_criteria, w.total_criteria, w.manual_trials), (2, 3, 2));
        assert_eq!(w.fraction.value, Some(0.6667));
        assert!(workload_stats(&run).is_err());
    }

    #[test]
    fn rejecting_the_only_dropout_flips_the_verdict() {
        let run = build_review_queue(&run_of(&[trial("NCT1", "Inclusion Criteria:\n- a [not met]\n- b [met]")])).unwrap();
        let key = CriterionKey::new("NCT1", Section::Inclusion, 0);
        let next = apply_decisions(
            &run,
            &[decision(DecisionTarget::Criterion(key.clone()), DecisionAction::RejectDropout)],
            run.version,
        )
        .unwrap();
        let r = &next.results[0];
        assert_eq!(r.verdict, TrialVerdict::PredictedEligible);
        assert!(r.dropout_keys.is_empty());
        let a = &r.assessments[0];
        assert_eq!(a.label, EligibilityLabel::Unknown);
        assert_eq!(a.model_label(), EligibilityLabel::NotMet);
        assert_eq!(next.state, RunState::Finalized);
        assert_eq!(next.version, run.version + 1);
        assert_eq!(next.queue.as_ref().unwrap().items[0].status, ItemStatus::Rejected);
        assert!(matches!(
            apply_decisions(&next, &[], next.version),
            Err(EngineError::State { .. })
        ));
    }

    #[test]
    fn confirming_keeps_verdicts() {
        let run = build_review_queue(&run_of(&[trial("NCT1", "Inclusion Criteria:\n- a [not met]\n- b [not met]")])).unwrap();
        let ds: Vec<_> = run.queue.as_ref().unwrap().items.iter()
            .map(|i| decision(DecisionTarget::Criterion(i.criterion.key.clone()), DecisionAction::ConfirmDropout))
            .collect();
        let next = apply_decisions(&run, &ds, run.version).unwrap();
        assert_eq!(next.results, run.results);
        assert_eq!(next.state, RunState::Finalized);
    }

    #[test]
    fn decisions_are_atomic_and_validated() {
        let run = build_review_queue(&run_of(&[
            trial("NCT1", "Inclusion Criteria:\n- a [not met]\n- b [not met]"),
            trial("NCT2", "garbage"),
        ]))
        .unwrap();
        let k0 = CriterionKey::new("NCT1", Section::Inclusion, 0);
        let good = decision(DecisionTarget::Criterion(k0.clone()), DecisionAction::RejectDropout);
        let not_queued = decision(
            DecisionTarget::Criterion(CriterionKey::new("NCT1", Section::Exclusion, 0)),
            DecisionAction::ConfirmDropout,
        );
        assert!(matches!(
            apply_decisions(&run, &[good.clone(), not_queued], run.version),
            Err(EngineError::Validation(_))
        ));
        assert!(matches!(
            apply_decisions(&run, std::slice::from_ref(&good), run.version - 1),
            Err(EngineError::Conflict { .. })
        ));
        let mut still_dropout = good.clone();
        still_dropout.corrected_label = Some(EligibilityLabel::NotMet);
        assert!(apply_decisions(&run, &[still_dropout], run.version).is_err());
        let wrong_kind = decision(DecisionTarget::Trial("NCT1".into()), DecisionAction::ConfirmTrialEligible);
        assert!(apply_decisions(&run, &[wrong_kind], run.version).is_err());
        assert!(apply_decisions(&run, &[], run.version).is_err());

        let step = apply_decisions(&run, std::slice::from_ref(&good), run.version).unwrap();
        assert_eq!(step.state, RunState::InReview);
        assert!(apply_decisions(&step, &[good], step.version).is_err());
        let rest = [
            decision(
                DecisionTarget::Criterion(CriterionKey::new("NCT1", Section::Inclusion, 1)),
                DecisionAction::ConfirmDropout,
            ),
            decision(DecisionTarget::Trial("NCT2".into()), DecisionAction::ConfirmTrialIneligible),
        ];
        let done = apply_decisions(&step, &rest, step.version).unwrap();
        assert_eq!(done.state, RunState::Finalized);
        assert_eq!(done.result("NCT2").unwrap().eligible(), Some(false));
        assert_eq!(done.decisions.len(), 3);
    }

    #[test]
    fn empty_queue_finalizes_with_empty_batch() {
        let run = build_review_queue(&run_of(&[trial("NCT1", "Inclusion Criteria:\n- a [met]")])).unwrap();
        let w = workload_stats(&run).unwrap();
        assert_eq!(w.queued_criteria, 0);
        assert_eq!(w.fraction.value, Some(0.0));
        let done = apply_decisions(&run, &[], run.version).unwrap();
        assert_eq!(done.state, RunState::Finalized);
    }

    #[test]
    fn run_serializes_round_trip() {
        let run = build_review_queue(&run_of(&[trial("NCT1", "Inclusion Criteria:\n- a [not met]"), trial("NCT2", "x")])).unwrap();
        let text = serde_json::to_string(&run).unwrap();
        let back: ScreeningRun = serde_json::from_str(&text).unwrap();
        assert_eq!(back, run);
        assert_eq!(back.etag(), run.etag());
    }
}
