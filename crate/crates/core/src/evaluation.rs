//! Scores screening runs against gold annotations.
//!
//! Every metric reads the model's own labels (`model_label`), so physician
//! overrides applied during review never change what the model is credited
//! with. Manual-route trials are left out of the confusion matrices and
//! counted separately.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{DecisionAction, DecisionTarget, ReviewDecision, ScreeningRun, TrialScreeningResult};
use crate::error::EvalError;
use crate::io::jsonl_lines;
use crate::model::{is_dropout, CriterionAssessment, CriterionKey, EligibilityLabel, ManualReason};

/// An exact fraction with a 4-decimal rounding; `value` is null when the
/// denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
    pub value: Option<f64>,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Self {
        let value = (den > 0).then(|| ((num as f64 / den as f64) * 10_000.0).round() / 10_000.0);
        Self { num, den, value }
    }

    /// Unrounded quotient.
    pub fn exact(&self) -> Option<f64> {
        (self.den > 0).then(|| self.num as f64 / self.den as f64)
    }
}

impl std::fmt::Display for Ratio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.value {
            Some(v) => write!(f, "{v:.4} ({}/{})", self.num, self.den),
            None => write!(f, "n/a ({}/{})", self.num, self.den),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: Ratio,
    pub recall: Ratio,
    pub accuracy: Ratio,
}

impl ConfusionMatrix {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self {
            tp,
            fp,
            fn_,
            tn,
            precision: Ratio::new(tp, tp + fp),
            recall: Ratio::new(tp, tp + fn_),
            accuracy: Ratio::new(tp + tn, tp + fp + fn_ + tn),
        }
    }

    /// Builds the matrix from (predicted, actual) pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = [0u64; 4];
        for (pred, gold) in pairs {
            c[Cell::of(pred, gold) as usize] += 1;
        }
        Self::from_counts(c[0], c[1], c[2], c[3])
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cell {
    TP,
    FP,
    FN,
    TN,
}

impl Cell {
    pub fn of(predicted: bool, actual: bool) -> Self {
        match (predicted, actual) {
            (true, true) => Cell::TP,
            (true, false) => Cell::FP,
            (false, true) => Cell::FN,
            (false, false) => Cell::TN,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Cell::TP => "TP",
            Cell::FP => "FP",
            Cell::FN => "FN",
            Cell::TN => "TN",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorPattern {
    /// Incorrect reasoning step.
    D,
    /// Incorrect or insufficient knowledge.
    E,
    /// Incorrect reading of the summary or criterion.
    F,
    #[default]
    #[serde(rename = "none")]
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionGold {
    pub profile_id: String,
    pub key: CriterionKey,
    pub gold_screenable: bool,
    #[serde(default)]
    pub gold_label: EligibilityLabel,
    #[serde(default)]
    pub error_pattern: ErrorPattern,
}

impl CriterionGold {
    pub fn dropout(&self) -> bool {
        is_dropout(self.key.section, self.gold_label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialGold {
    pub profile_id: String,
    pub trial_id: String,
    pub gold_eligible: bool,
}

/// One line of a gold file: either a criterion or a trial annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GoldRecord {
    Criterion(CriterionGold),
    Trial(TrialGold),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProfileGold {
    pub criteria: BTreeMap<CriterionKey, CriterionGold>,
    pub trials: BTreeMap<String, bool>,
}

/// Gold annotations keyed by profile, since the same trial can be eligible
/// for one patient and not another.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldSet {
    pub profiles: BTreeMap<String, ProfileGold>,
}

impl GoldSet {
    /// Builds and checks a gold set. A trial marked eligible must not carry
    /// a gold dropout criterion.
    pub fn from_records(records: impl IntoIterator<Item = GoldRecord>) -> Result<Self, EvalError> {
        let mut set = GoldSet::default();
        for r in records {
            match r {
                GoldRecord::Criterion(c) => {
                    set.profiles
                        .entry(c.profile_id.clone())
                        .or_default()
                        .criteria
                        .insert(c.key.clone(), c);
                }
                GoldRecord::Trial(t) => {
                    set.profiles
                        .entry(t.profile_id)
                        .or_default()
                        .trials
                        .insert(t.trial_id, t.gold_eligible);
                }
            }
        }
        for (profile_id, p) in &set.profiles {
            for c in p.criteria.values() {
                if c.dropout() && p.trials.get(&c.key.trial_id) == Some(&true) {
                    return Err(EvalError::Inconsistent {
                        trial_id: c.key.trial_id.clone(),
                        detail: format!("profile {profile_id}: marked eligible but {} is a gold dropout", c.key),
                    });
                }
            }
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let lines = jsonl_lines(path).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let records = lines
            .into_iter()
            .map(|(line, text)| {
                serde_json::from_str::<GoldRecord>(&text).map_err(|e| EvalError::Schema {
                    path: path.to_path_buf(),
                    line,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_records(records)
    }

    pub fn records(&self) -> Vec<GoldRecord> {
        let mut out = Vec::new();
        for (profile_id, p) in &self.profiles {
            for (trial_id, eligible) in &p.trials {
                out.push(GoldRecord::Trial(TrialGold {
                    profile_id: profile_id.clone(),
                    trial_id: trial_id.clone(),
                    gold_eligible: *eligible,
                }));
            }
            out.extend(p.criteria.values().cloned().map(GoldRecord::Criterion));
        }
        out
    }

    fn criterion(&self, profile_id: &str, key: &CriterionKey) -> Result<&CriterionGold, EvalError> {
        self.profiles
            .get(profile_id)
            .and_then(|p| p.criteria.get(key))
            .ok_or_else(|| EvalError::MissingCriterion(key.clone()))
    }

    fn trial(&self, profile_id: &str, trial_id: &str) -> Option<bool> {
        self.profiles.get(profile_id).and_then(|p| p.trials.get(trial_id)).copied()
    }

    fn trial_required(&self, profile_id: &str, trial_id: &str) -> Result<bool, EvalError> {
        self.trial(profile_id, trial_id)
            .ok_or_else(|| EvalError::MissingTrial(trial_id.to_string()))
    }
}

/// Every assessment of an evaluated trial paired with its gold entry.
fn paired<'a>(
    runs: &'a [ScreeningRun],
    gold: &'a GoldSet,
) -> Result<Vec<(&'a CriterionAssessment, &'a CriterionGold)>, EvalError> {
    let mut out = Vec::new();
    for run in runs {
        for r in run.evaluated() {
            for a in &r.assessments {
                out.push((a, gold.criterion(&run.profile_id, &a.key)?));
            }
        }
    }
    Ok(out)
}

pub fn screenability_confusion(runs: &[ScreeningRun], gold: &GoldSet) -> Result<ConfusionMatrix, EvalError> {
    Ok(ConfusionMatrix::from_pairs(
        paired(runs, gold)?.into_iter().map(|(a, g)| (a.screenable, g.gold_screenable)),
    ))
}

/// Share of correctly labelled criteria among those both the model and the
/// gold consider screenable.
pub fn criterion_accuracy(runs: &[ScreeningRun], gold: &GoldSet) -> Result<Ratio, EvalError> {
    let pairs = paired(runs, gold)?;
    let tp: Vec<_> = pairs.iter().filter(|(a, g)| a.screenable && g.gold_screenable).collect();
    let correct = tp.iter().filter(|(a, g)| a.model_label() == g.gold_label).count();
    Ok(Ratio::new(correct as u64, tp.len() as u64))
}

/// Criterion counts split by screenability cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    pub from_tp_screenable: u64,
    pub from_fp_screenable: u64,
    pub from_fn_screenable: u64,
    pub from_tn_screenable: u64,
}

impl CellCounts {
    fn add(&mut self, cell: Cell) {
        match cell {
            Cell::TP => self.from_tp_screenable += 1,
            Cell::FP => self.from_fp_screenable += 1,
            Cell::FN => self.from_fn_screenable += 1,
            Cell::TN => self.from_tn_screenable += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.from_tp_screenable + self.from_fp_screenable + self.from_fn_screenable + self.from_tn_screenable
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutConfusion {
    pub matrix: ConfusionMatrix,
    /// False-positive dropouts by the screenability cell they came from.
    pub fp_by_source: CellCounts,
    /// False-negative dropouts by the screenability cell they came from.
    pub fn_by_source: CellCounts,
}

pub fn dropout_confusion(runs: &[ScreeningRun], gold: &GoldSet) -> Result<DropoutConfusion, EvalError> {
    let pairs = paired(runs, gold)?;
    let mut fp_by_source = CellCounts::default();
    let mut fn_by_source = CellCounts::default();
    for (a, g) in &pairs {
        let source = Cell::of(a.screenable, g.gold_screenable);
        match Cell::of(a.model_dropout(), g.dropout()) {
            Cell::FP => fp_by_source.add(source),
            Cell::FN => fn_by_source.add(source),
            _ => {}
        }
    }
    Ok(DropoutConfusion {
        matrix: ConfusionMatrix::from_pairs(pairs.iter().map(|(a, g)| (a.model_dropout(), g.dropout()))),
        fp_by_source,
        fn_by_source,
    })
}

/// The model's own verdict: eligible unless a model label is a dropout.
fn model_eligible(r: &TrialScreeningResult) -> bool {
    !r.assessments.iter().any(|a| a.model_dropout())
}

/// Trial-level confusion with "eligible" as the positive class.
pub fn trial_confusion(runs: &[ScreeningRun], gold: &GoldSet) -> Result<ConfusionMatrix, EvalError> {
    let mut pairs = Vec::new();
    for run in runs {
        for r in run.evaluated() {
            pairs.push((model_eligible(r), gold.trial_required(&run.profile_id, &r.trial_id)?));
        }
    }
    Ok(ConfusionMatrix::from_pairs(pairs))
}

/// Pattern counts per screenability cell. Only annotated criteria count.
pub fn error_pattern_tally(
    runs: &[ScreeningRun],
    gold: &GoldSet,
) -> Result<BTreeMap<Cell, BTreeMap<ErrorPattern, u64>>, EvalError> {
    let mut out: BTreeMap<Cell, BTreeMap<ErrorPattern, u64>> = BTreeMap::new();
    for (a, g) in paired(runs, gold)? {
        if g.error_pattern != ErrorPattern::None {
            *out.entry(Cell::of(a.screenable, g.gold_screenable))
                .or_default()
                .entry(g.error_pattern)
                .or_default() += 1;
        }
    }
    Ok(out)
}

/// The decisions a reviewer with perfect knowledge would make: reject every
/// dropout the gold does not support and resolve manual trials that have
/// trial-level gold.
pub fn oracle_decisions(run: &ScreeningRun, gold: &GoldSet, reviewer_id: &str) -> Result<Vec<ReviewDecision>, EvalError> {
    let mut out = Vec::new();
    let stamp = run.created_at;
    for r in &run.results {
        if r.verdict.is_manual() {
            if let Some(eligible) = gold.trial(&run.profile_id, &r.trial_id) {
                out.push(ReviewDecision {
                    target: DecisionTarget::Trial(r.trial_id.clone()),
                    action: if eligible {
                        DecisionAction::ConfirmTrialEligible
                    } else {
                        DecisionAction::ConfirmTrialIneligible
                    },
                    reviewer_id: reviewer_id.to_string(),
                    note: "oracle".into(),
                    timestamp: stamp,
                    corrected_label: None,
                });
            }
            continue;
        }
        for a in r.assessments.iter().filter(|a| a.model_dropout()) {
            let g = gold.criterion(&run.profile_id, &a.key)?;
            let (action, corrected_label) = if g.dropout() {
                (DecisionAction::ConfirmDropout, None)
            } else {
                (DecisionAction::RejectDropout, Some(g.gold_label))
            };
            out.push(ReviewDecision {
                target: DecisionTarget::Criterion(a.key.clone()),
                action,
                reviewer_id: reviewer_id.to_string(),
                note: "oracle".into(),
                timestamp: stamp,
                corrected_label,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssistedMetrics {
    pub recall: Ratio,
    pub precision: Ratio,
    pub matrix: ConfusionMatrix,
}

/// Trial confusion after an oracle review: a trial stays ineligible only if
/// one of its predicted dropouts is a gold dropout. Manual trials count only
/// when trial-level gold exists, and then resolve to it.
pub fn assisted_metrics(runs: &[ScreeningRun], gold: &GoldSet) -> Result<AssistedMetrics, EvalError> {
    let mut pairs = Vec::new();
    for run in runs {
        for r in &run.results {
            if r.verdict.is_manual() {
                if let Some(g) = gold.trial(&run.profile_id, &r.trial_id) {
                    pairs.push((g, g));
                }
                continue;
            }
            let gold_eligible = gold.trial_required(&run.profile_id, &r.trial_id)?;
            let mut confirmed = false;
            for a in r.assessments.iter().filter(|a| a.model_dropout()) {
                confirmed |= gold.criterion(&run.profile_id, &a.key)?.dropout();
            }
            pairs.push((!confirmed, gold_eligible));
        }
    }
    let matrix = ConfusionMatrix::from_pairs(pairs);
    Ok(AssistedMetrics {
        recall: matrix.recall,
        precision: matrix.precision,
        matrix,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManualSummary {
    pub total: u64,
    pub parse_failure: u64,
    pub pipeline_error: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub queued_criteria: u64,
    pub total_criteria: u64,
    pub fraction: Ratio,
    pub manual_trials: u64,
}

/// Queue size implied by the model's dropouts; equal to the review queue
/// length once it is built.
pub fn workload(runs: &[ScreeningRun]) -> Workload {
    let mut queued = 0;
    let mut total = 0;
    let mut manual = 0;
    for run in runs {
        manual += run.manual().count() as u64;
        for r in run.evaluated() {
            total += r.assessments.len() as u64;
            queued += r.assessments.iter().filter(|a| a.model_dropout()).count() as u64;
        }
    }
    Workload {
        queued_criteria: queued,
        total_criteria: total,
        fraction: Ratio::new(queued, total),
        manual_trials: manual,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub run_ids: Vec<String>,
    pub screenability: ConfusionMatrix,
    pub criterion_accuracy_on_tp_screenable: Ratio,
    pub dropout: ConfusionMatrix,
    pub dropout_fp_by_source: CellCounts,
    pub dropout_fn_by_source: CellCounts,
    pub trial: ConfusionMatrix,
    pub manual: ManualSummary,
    pub error_patterns: BTreeMap<Cell, BTreeMap<ErrorPattern, u64>>,
    pub workload: Workload,
    pub assisted: AssistedMetrics,
}

pub fn evaluate(runs: &[ScreeningRun], gold: &GoldSet) -> Result<EvaluationReport, EvalError> {
    let mut seen = HashSet::new();
    for run in runs {
        if !seen.insert(run.profile_id.as_str()) {
            tracing::warn!(profile = %run.profile_id, "several runs for one profile are pooled");
        }
    }
    let dropout = dropout_confusion(runs, gold)?;
    let mut manual = ManualSummary::default();
    for r in runs.iter().flat_map(|run| run.manual()) {
        manual.total += 1;
        match r.verdict.manual_reason() {
            Some(ManualReason::ParseFailure) => manual.parse_failure += 1,
            Some(ManualReason::PipelineError) => manual.pipeline_error += 1,
            None => {}
        }
    }
    Ok(EvaluationReport {
        run_ids: runs.iter().map(|r| r.run_id.clone()).collect(),
        screenability: screenability_confusion(runs, gold)?,
        criterion_accuracy_on_tp_screenable: criterion_accuracy(runs, gold)?,
        dropout: dropout.matrix,
        dropout_fp_by_source: dropout.fp_by_source,
        dropout_fn_by_source: dropout.fn_by_source,
        trial: trial_confusion(runs, gold)?,
        manual,
        error_patterns: error_pattern_tally(runs, gold)?,
        workload: workload(runs),
        assisted: assisted_metrics(runs, gold)?,
    })
}

fn matrix_rows(out: &mut String, title: &str, m: &ConfusionMatrix, positive: &str, negative: &str) {
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "  {:<24}{:>18}{:>18}", "", format!("gold {positive}"), format!("gold {negative}"));
    let _ = writeln!(out, "  {:<24}{:>18}{:>18}", format!("predicted {positive}"), m.tp, m.fp);
    let _ = writeln!(out, "  {:<24}{:>18}{:>18}", format!("predicted {negative}"), m.fn_, m.tn);
    let _ = writeln!(
        out,
        "  precision {}  recall {}  accuracy {}",
        m.precision, m.recall, m.accuracy
    );
}

/// Plain-text rendering of a report, laid out like a results table.
pub fn render_report(report: &EvaluationReport) -> String {
    let mut out = String::new();
    matrix_rows(&mut out, "Screenability (criteria)", &report.screenability, "screenable", "not");
    let _ = writeln!(
        out,
        "Criterion accuracy on TP-screenable: {}\n",
        report.criterion_accuracy_on_tp_screenable
    );
    matrix_rows(&mut out, "Dropout criteria", &report.dropout, "dropout", "not");
    let fp = &report.dropout_fp_by_source;
    let _ = writeln!(
        out,
        "  FP dropouts from TP-screenable {} / FP-screenable {}",
        fp.from_tp_screenable, fp.from_fp_screenable
    );
    let fnc = &report.dropout_fn_by_source;
    let _ = writeln!(
        out,
        "  FN dropouts from TP {} / FP {} / FN {} / TN screenable {}\n",
        fnc.from_tp_screenable, fnc.from_fp_screenable, fnc.from_fn_screenable, fnc.from_tn_screenable
    );
    matrix_rows(&mut out, "Trials", &report.trial, "eligible", "ineligible");
    let _ = writeln!(
        out,
        "  not evaluated (manual route): {} (parse failure {}, pipeline error {})\n",
        report.manual.total, report.manual.parse_failure, report.manual.pipeline_error
    );
    let _ = writeln!(out, "Reasoning error patterns");
    let _ = writeln!(out, "  {:<6}{:>6}{:>6}{:>6}", "cell", "D", "E", "F");
    for (cell, counts) in &report.error_patterns {
        let get = |p| counts.get(&p).copied().unwrap_or(0);
        let _ = writeln!(
            out,
            "  {:<6}{:>6}{:>6}{:>6}",
            cell.as_str(),
            get(ErrorPattern::D),
            get(ErrorPattern::E),
            get(ErrorPattern::F)
        );
    }
    let w = &report.workload;
    let _ = writeln!(
        out,
        "\nWorkload: {} of {} criteria queued, fraction {}; {} manual trials",
        w.queued_criteria, w.total_criteria, w.fraction, w.manual_trials
    );
    let _ = writeln!(
        out,
        "After review: recall {}  precision {}",
        report.assisted.recall, report.assisted.precision
    );
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunPoint {
    pub screenability_precision: Option<f64>,
    pub screenability_recall: Option<f64>,
    pub trial_precision: Option<f64>,
    pub trial_recall: Option<f64>,
}

impl RunPoint {
    pub const METRICS: [&'static str; 4] = [
        "screenability_precision",
        "screenability_recall",
        "trial_precision",
        "trial_recall",
    ];

    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "screenability_precision" => self.screenability_precision,
            "screenability_recall" => self.screenability_recall,
            "trial_precision" => self.trial_precision,
            "trial_recall" => self.trial_recall,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    /// Runs where the metric is defined.
    pub n: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation (n - 1 denominator); null below two runs.
    pub std: Option<f64>,
}

pub fn summarize(values: &[f64]) -> MetricSummary {
    let n = values.len();
    if n == 0 {
        return MetricSummary {
            n,
            mean: None,
            std: None,
        };
    }
    if values.iter().all(|v| *v == values[0]) {
        // Identical runs: report the value itself and an exact zero spread.
        return MetricSummary {
            n,
            mean: Some(values[0]),
            std: (n >= 2).then_some(0.0),
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n >= 2).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    MetricSummary {
        n,
        mean: Some(mean),
        std,
    }
}

fn summaries(points: &[RunPoint]) -> BTreeMap<String, MetricSummary> {
    RunPoint::METRICS
        .iter()
        .map(|m| {
            let values: Vec<f64> = points.iter().filter_map(|p| p.get(m)).collect();
            (m.to_string(), summarize(&values))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticityGroup {
    pub profile_id: String,
    pub temperature: f64,
    pub run_ids: Vec<String>,
    pub points: Vec<RunPoint>,
    pub summary: BTreeMap<String, MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSummary {
    pub temperature: f64,
    pub runs: usize,
    pub summary: BTreeMap<String, MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticityReport {
    pub groups: Vec<StochasticityGroup>,
    /// All runs at one temperature pooled across profiles.
    pub by_temperature: Vec<TemperatureSummary>,
}

pub fn run_point(run: &ScreeningRun, gold: &GoldSet) -> Result<RunPoint, EvalError> {
    let runs = std::slice::from_ref(run);
    let s = screenability_confusion(runs, gold)?;
    let t = trial_confusion(runs, gold)?;
    Ok(RunPoint {
        screenability_precision: s.precision.exact(),
        screenability_recall: s.recall.exact(),
        trial_precision: t.precision.exact(),
        trial_recall: t.recall.exact(),
    })
}

/// Groups runs by (profile, temperature) and reports per-run points with
/// their mean and sample standard deviation. Unrounded quotients are used
/// so the statistics can be recomputed exactly.
pub fn stochasticity(runs: &[ScreeningRun], gold: &GoldSet) -> Result<StochasticityReport, EvalError> {
    let temp_key = |t: f64| format!("{t:.3}");
    let mut groups: BTreeMap<(String, String), StochasticityGroup> = BTreeMap::new();
    let mut pooled: BTreeMap<String, (f64, Vec<RunPoint>)> = BTreeMap::new();
    for run in runs {
        let point = run_point(run, gold)?;
        let t = run.params.temperature;
        let g = groups
            .entry((run.profile_id.clone(), temp_key(t)))
            .or_insert_with(|| StochasticityGroup {
                profile_id: run.profile_id.clone(),
                temperature: t,
                run_ids: Vec::new(),
                points: Vec::new(),
                summary: BTreeMap::new(),
            });
        g.run_ids.push(run.run_id.clone());
        g.points.push(point);
        pooled.entry(temp_key(t)).or_insert_with(|| (t, Vec::new())).1.push(point);
    }
    let groups = groups
        .into_values()
        .map(|mut g| {
            g.summary = summaries(&g.points);
            g
        })
        .collect();
    let by_temperature = pooled
        .into_values()
        .map(|(temperature, points)| TemperatureSummary {
            temperature,
            runs: points.len(),
            summary: summaries(&points),
        })
        .collect();
    Ok(StochasticityReport { groups, by_temperature })
}

pub fn render_stochasticity(report: &StochasticityReport) -> String {
    let mut out = String::new();
    let fmt = |s: &MetricSummary| match (s.mean, s.std) {
        (Some(m), Some(sd)) => format!("{m:.4} ± {sd:.4}"),
        (Some(m), None) => format!("{m:.4}"),
        _ => "n/a".into(),
    };
    let _ = writeln!(
        out,
        "{:<10}{:>6}{:>6}{:>20}{:>20}{:>20}{:>20}",
        "profile", "temp", "runs", "screen precision", "screen recall", "trial precision", "trial recall"
    );
    let row = |out: &mut String, who: &str, t: f64, n: usize, s: &BTreeMap<String, MetricSummary>| {
        let cells: Vec<String> = RunPoint::METRICS.iter().map(|m| fmt(&s[*m])).collect();
        let _ = writeln!(
            out,
            "{:<10}{:>6.2}{:>6}{:>20}{:>20}{:>20}{:>20}",
            who, t, n, cells[0], cells[1], cells[2], cells[3]
        );
    };
    for g in &report.groups {
        row(&mut out, &g.profile_id, g.temperature, g.points.len(), &g.summary);
    }
    for t in &report.by_temperature {
        row(&mut out, "all", t.temperature, t.runs, &t.summary);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{RunState, ScreeningRun, TrialScreeningResult};
    use crate::gateway::ModelParams;
    use crate::model::{PatientProfile, Provenance, Section, Sex, TrialVerdict};
    use chrono::{DateTime, Utc};
    use proptest::prelude::*;

    fn prov() -> Provenance {
        Provenance {
            model_name: "m".into(),
            temperature: 0.0,
            prompt_hash: "h".into(),
            created_at: DateTime::<Utc>::UNIX_EPOCH,
        }
    }

    /// (section, screenable, label, gold_screenable, gold_label) per criterion.
    type Row = (Section, bool, EligibilityLabel, bool, EligibilityLabel);

    fn fixture(trials: &[Vec<Row>]) -> (ScreeningRun, GoldSet) {
        let mut results = Vec::new();
        let mut gold = Vec::new();
        for (ti, rows) in trials.iter().enumerate() {
            let trial_id = format!("T{ti:03}");
            let mut assessments = Vec::new();
            let mut ordinals = [0u32; 2];
            let mut gold_dropout = false;
            for (s, screenable, label, gs, gl) in rows {
                let o = &mut ordinals[*s as usize];
                let key = CriterionKey::new(&trial_id, *s, *o);
                *o += 1;
                assessments.push(if *screenable {
                    CriterionAssessment::screened(key.clone(), "r".into(), *label, prov())
                } else {
                    CriterionAssessment::not_screenable(key.clone(), prov())
                });
                gold_dropout |= is_dropout(*s, *gl);
                gold.push(GoldRecord::Criterion(CriterionGold {
                    profile_id: "P".into(),
                    key,
                    gold_screenable: *gs,
                    gold_label: *gl,
                    error_pattern: ErrorPattern::None,
                }));
            }
            gold.push(GoldRecord::Trial(TrialGold {
                profile_id: "P".into(),
                trial_id: trial_id.clone(),
                gold_eligible: !gold_dropout,
            }));
            assessments.sort_by(|a, b| a.key.cmp(&b.key));
            let mut r = TrialScreeningResult {
                trial_id,
                trial_title: String::new(),
                verdict: TrialVerdict::PredictedEligible,
                assessments,
                dropout_keys: vec![],
                criteria: vec![],
                diagnostics: vec![],
                all_unknown: false,
                manual_resolution: None,
            };
            r.recompute().unwrap();
            results.push(r);
        }
        let run = ScreeningRun {
            run_id: "r".into(),
            profile_id: "P".into(),
            profile: PatientProfile {
                profile_id: "P".into(),
                condition_code: "C".into(),
                condition_name: "c".into(),
                age: 50,
                sex: Sex::Male,
                country: "NL".into(),
                medical_summary: "s".into(),
            },
            params: ModelParams::default(),
            exemplar_id: "e".into(),
            combined: false,
            results,
            prefiltered_out: vec![],
            state: RunState::Screened,
            version: 1,
            created_at: DateTime::<Utc>::UNIX_EPOCH,
            queue: None,
            decisions: vec![],
        };
        (run, GoldSet::from_records(gold).unwrap())
    }

    #[test]
    fn ratio_rounding_and_null() {
        assert_eq!(Ratio::new(2994, 4135).value, Some(0.7241));
        assert_eq!(Ratio::new(341, 471).value, Some(0.724));
        assert_eq!(Ratio::new(328, 4135).value, Some(0.0793));
        assert_eq!(Ratio::new(0, 0).value, None);
    }

    #[test]
    fn table_three_counts() {
        let m = ConfusionMatrix::from_counts(32, 13, 33, 68);
        assert_eq!(m.precision.value, Some(0.7111));
        assert_eq!(m.recall.value, Some(0.4923));
        assert_eq!(m.total(), 146);
        assert_eq!(ConfusionMatrix::from_counts(0, 0, 3, 4).precision.value, None);
    }

    #[test]
    fn all_correct_toy_run() {
        use EligibilityLabel::*;
        use Section::*;
        let (run, gold) = fixture(&[vec![
            (Inclusion, true, Met, true, Met),
            (Exclusion, false, Unknown, false, Unknown),
        ]]);
        let runs = [run];
        let s = screenability_confusion(&runs, &gold).unwrap();
        assert_eq!(s.accuracy.value, Some(1.0));
        let d = dropout_confusion(&runs, &gold).unwrap();
        assert_eq!((d.matrix.tp, d.matrix.fp, d.matrix.fn_), (0, 0, 0));
        assert!(error_pattern_tally(&runs, &gold).unwrap().is_empty());
        let a = assisted_metrics(&runs, &gold).unwrap();
        assert_eq!(a.matrix, trial_confusion(&runs, &gold).unwrap());
    }

    #[test]
    fn missing_gold_is_named() {
        use EligibilityLabel::*;
        let (run, _) = fixture(&[vec![(Section::Inclusion, true, Met, true, Met)]]);
        let err = screenability_confusion(&[run], &GoldSet::default()).unwrap_err();
        assert!(matches!(err, EvalError::MissingCriterion(k) if k.trial_id == "T000"));
    }

    #[test]
    fn eligible_trial_with_gold_dropout_is_rejected() {
        let records = vec![
            GoldRecord::Trial(TrialGold {
                profile_id: "P".into(),
                trial_id: "T".into(),
                gold_eligible: true,
            }),
            GoldRecord::Criterion(CriterionGold {
                profile_id: "P".into(),
                key: CriterionKey::new("T", Section::Exclusion, 0),
                gold_screenable: true,
                gold_label: EligibilityLabel::Met,
                error_pattern: ErrorPattern::None,
            }),
        ];
        assert!(matches!(GoldSet::from_records(records), Err(EvalError::Inconsistent { .. })));
    }

    #[test]
    fn gold_lines_parse_both_shapes() {
        let c: GoldRecord = serde_json::from_str(
            r#"{"profile_id":"P","key":{"trial_id":"T","section":"inclusion","ordinal":0},"gold_screenable":true,"gold_label":"not_met","error_pattern":"D"}"#,
        )
        .unwrap();
        assert!(matches!(c, GoldRecord::Criterion(ref g) if g.error_pattern == ErrorPattern::D && g.dropout()));
        let t: GoldRecord = serde_json::from_str(r#"{"profile_id":"P","trial_id":"T","gold_eligible":false}"#).unwrap();
        assert!(matches!(t, GoldRecord::Trial(_)));
    }

    #[test]
    fn two_run_sample_std() {
        let s = summarize(&[0.4, 0.6]);
        assert!((s.mean.unwrap() - 0.5).abs() < 1e-12);
        assert!((s.std.unwrap() - 0.1414).abs() < 1e-4);
        let same = summarize(&[0.7, 0.7, 0.7]);
        assert_eq!(same.std, Some(0.0));
        assert_eq!(summarize(&[0.3]).std, None);
    }

    fn arb_label() -> impl Strategy<Value = EligibilityLabel> {
        prop_oneof![
            Just(EligibilityLabel::Met),
            Just(EligibilityLabel::NotMet),
            Just(EligibilityLabel::Unknown)
        ]
    }

    fn arb_row() -> impl Strategy<Value = Row> {
        (
            prop_oneof![Just(Section::Inclusion), Just(Section::Exclusion)],
            any::<bool>(),
            arb_label(),
            any::<bool>(),
            arb_label(),
        )
            .prop_map(|(s, sc, l, gs, gl)| (s, sc, if sc { l } else { EligibilityLabel::Unknown }, gs, gl))
    }

    fn arb_trials(n: usize) -> impl Strategy<Value = Vec<Vec<Row>>> {
        prop::collection::vec(prop::collection::vec(arb_row(), 0..8), 1..n)
    }

    proptest! {
        #[test]
        fn metrics_equal_brute_force(trials in arb_trials(20)) {
            let (run, gold) = fixture(&trials);
            let runs = [run];
            let rows: Vec<&Row> = trials.iter().flatten().collect();
            let count = |f: &dyn Fn(&Row) -> bool| rows.iter().filter(|r| f(r)).count() as u64;

            let s = screenability_confusion(&runs, &gold).unwrap();
            prop_assert_eq!(s.tp, count(&|r| r.1 && r.3));
            prop_assert_eq!(s.fp, count(&|r| r.1 && !r.3));
            prop_assert_eq!(s.fn_, count(&|r| !r.1 && r.3));
            prop_assert_eq!(s.total(), rows.len() as u64);

            let acc = criterion_accuracy(&runs, &gold).unwrap();
            prop_assert_eq!(acc.den, s.tp);
            prop_assert_eq!(acc.num, count(&|r| r.1 && r.3 && r.2 == r.4));

            let d = dropout_confusion(&runs, &gold).unwrap();
            prop_assert_eq!(d.matrix.fp, count(&|r| is_dropout(r.0, r.2) && !is_dropout(r.0, r.4)));
            prop_assert_eq!(d.matrix.fn_, count(&|r| !is_dropout(r.0, r.2) && is_dropout(r.0, r.4)));
            prop_assert_eq!(d.fp_by_source.total(), d.matrix.fp);
            prop_assert_eq!(d.fn_by_source.total(), d.matrix.fn_);

            let t = trial_confusion(&runs, &gold).unwrap();
            let mut brute = [0u64; 4];
            for rows in &trials {
                let pred = !rows.iter().any(|r| is_dropout(r.0, r.2));
                let actual = !rows.iter().any(|r| is_dropout(r.0, r.4));
                brute[Cell::of(pred, actual) as usize] += 1;
            }
            prop_assert_eq!([t.tp, t.fp, t.fn_, t.tn], brute);

            let a = assisted_metrics(&runs, &gold).unwrap();
            if a.recall.den > 0 {
                prop_assert_eq!(a.recall.num, a.recall.den);
            }
            let mut assisted = [0u64; 4];
            for rows in &trials {
                let pred = !rows.iter().any(|r| is_dropout(r.0, r.2) && is_dropout(r.0, r.4));
                let actual = !rows.iter().any(|r| is_dropout(r.0, r.4));
                assisted[Cell::of(pred, actual) as usize] += 1;
            }
            prop_assert_eq!([a.matrix.tp, a.matrix.fp, a.matrix.fn_, a.matrix.tn], assisted);
        }

        #[test]
        fn reports_are_pure(trials in arb_trials(8)) {
            let (run, gold) = fixture(&trials);
            let a = serde_json::to_string(&evaluate(std::slice::from_ref(&run), &gold).unwrap()).unwrap();
            let b = serde_json::to_string(&evaluate(std::slice::from_ref(&run), &gold).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn summary_matches_closed_form(values in prop::collection::vec(0.0f64..1.0, 2..12)) {
            let s = summarize(&values);
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            prop_assert!((s.mean.unwrap() - mean).abs() < 1e-12);
            prop_assert!((s.std.unwrap() - var.sqrt()).abs() < 1e-12);
        }
    }
}
