//! A generated fixture with the shape of a full evaluation cohort: ten
//! profiles, 146 screenable trials holding 4135 criteria, and 36 trials whose
//! eligibility text cannot be segmented.
//!
//! Each criterion carries a tag (`[mock:met]`, `[mock:not_met]`,
//! `[mock:unknown]` or `[mock:skip]`) that tells the mock backend what to
//! answer, and the gold annotation is chosen per criterion so that the
//! model/gold agreement lands in fixed confusion cells. Placement of those
//! cells across trials is shuffled with a fixed seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trialscreen_core::evaluation::{CriterionGold, ErrorPattern, GoldRecord, GoldSet, TrialGold};
use trialscreen_core::gateway::{MockRule, MockScript};
use trialscreen_core::{is_dropout, CriterionKey, EligibilityLabel, PatientProfile, Section, TrialRecord, TrialStatus};

const SEED: u64 = 0x7472_6961_6c73;

/// Per profile: evaluated trials, criteria in those trials, and trials whose
/// text fails segmentation.
pub const LAYOUT: [(&str, usize, usize, usize); 10] = [
    ("FP001", 10, 302, 3),
    ("FP002", 11, 335, 3),
    ("FP003", 15, 489, 5),
    ("FP004", 34, 1109, 0),
    ("FP005", 9, 252, 3),
    ("FP006", 10, 158, 3),
    ("FP007", 17, 420, 5),
    ("FP008", 5, 103, 2),
    ("FP009", 14, 402, 5),
    ("FP010", 21, 565, 7),
];

/// How a criterion's model answer relates to its gold annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Both screenable, both dropout.
    AgreedDropout,
    /// Both screenable; the model calls a dropout the gold does not.
    WrongDropout,
    /// Both screenable; the model misses a gold dropout.
    MissedDropout,
    /// Both screenable, both non-dropout with the same label.
    AgreedPass,
    /// Both screenable; the model answers unknown where the gold passes.
    UnknownPass,
    /// Model screens a criterion the gold leaves unscreenable, as a dropout.
    OverreachDropout,
    /// Model screens a criterion the gold leaves unscreenable, as a pass.
    OverreachPass,
    /// Model skips a screenable gold dropout.
    SkippedDropout,
    /// Model skips a screenable gold pass.
    SkippedPass,
    /// Neither side screens the criterion.
    Unscreenable,
}

/// Criterion counts per kind across the whole fixture.
pub const KIND_COUNTS: [(Kind, usize); 10] = [
    (Kind::AgreedDropout, 108),
    (Kind::WrongDropout, 33),
    (Kind::MissedDropout, 28),
    (Kind::AgreedPass, 233),
    (Kind::UnknownPass, 69),
    (Kind::OverreachDropout, 187),
    (Kind::OverreachPass, 678),
    (Kind::SkippedDropout, 15),
    (Kind::SkippedPass, 261),
    (Kind::Unscreenable, 2523),
];

/// Trial groups by (model verdict, gold verdict) and what they contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialKind {
    /// Eligible on both sides.
    BothEligible,
    /// Model excludes through wrong dropouts only; gold eligible.
    WronglyExcluded,
    /// Model eligible; gold excludes through a dropout the model missed.
    WronglyAdmitted,
    /// Both exclude, with at least one agreed dropout.
    AgreedExcluded,
    /// Both exclude, but the model only through wrong dropouts while the
    /// gold dropout was missed.
    ExcludedForWrongReason,
}

pub const TRIAL_COUNTS: [(TrialKind, usize); 5] = [
    (TrialKind::BothEligible, 32),
    (TrialKind::WronglyExcluded, 33),
    (TrialKind::WronglyAdmitted, 13),
    (TrialKind::AgreedExcluded, 55),
    (TrialKind::ExcludedForWrongReason, 13),
];

/// Error-pattern annotations: (pattern, count) among criteria screenable on
/// both sides, then among criteria only the model screens.
pub const PATTERNS_BOTH_SCREENABLE: [(ErrorPattern, usize); 3] =
    [(ErrorPattern::D, 85), (ErrorPattern::E, 13), (ErrorPattern::F, 38)];
pub const PATTERNS_MODEL_ONLY: [(ErrorPattern, usize); 1] = [(ErrorPattern::D, 442)];

#[derive(Debug, Clone)]
pub struct PaperFixture {
    pub profiles: Vec<PatientProfile>,
    /// Evaluated and unparseable trials plus one demographic decoy per
    /// profile.
    pub trials: Vec<TrialRecord>,
    pub script: MockScript,
    pub gold: GoldSet,
}

impl PaperFixture {
    pub fn trials_for(&self, profile: &PatientProfile) -> Vec<TrialRecord> {
        self.trials
            .iter()
            .filter(|t| t.condition_codes.contains(&profile.condition_code))
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Item {
    kind: Kind,
    variant: usize,
}

fn dropout_label(section: Section) -> EligibilityLabel {
    match section {
        Section::Inclusion => EligibilityLabel::NotMet,
        Section::Exclusion => EligibilityLabel::Met,
    }
}

fn pass_label(section: Section) -> EligibilityLabel {
    match section {
        Section::Inclusion => EligibilityLabel::Met,
        Section::Exclusion => EligibilityLabel::NotMet,
    }
}

/// (model screenable, model label, gold screenable, gold label)
fn answers(item: Item, section: Section) -> (bool, EligibilityLabel, bool, EligibilityLabel) {
    use EligibilityLabel::Unknown;
    let (d, p) = (dropout_label(section), pass_label(section));
    match item.kind {
        Kind::AgreedDropout => (true, d, true, d),
        Kind::WrongDropout => (true, d, true, p),
        Kind::MissedDropout => (true, p, true, d),
        Kind::AgreedPass => (true, p, true, p),
        Kind::UnknownPass => (true, Unknown, true, p),
        Kind::OverreachDropout => (true, d, false, Unknown),
        Kind::OverreachPass if item.variant % 3 == 2 => (true, Unknown, false, Unknown),
        Kind::OverreachPass => (true, p, false, Unknown),
        Kind::SkippedDropout => (false, Unknown, true, d),
        Kind::SkippedPass => (false, Unknown, true, p),
        Kind::Unscreenable => (false, Unknown, false, Unknown),
    }
}

fn tag(screenable: bool, label: EligibilityLabel) -> &'static str {
    match (screenable, label) {
        (false, _) => "[mock:skip]",
        (true, EligibilityLabel::Met) => "[mock:met]",
        (true, EligibilityLabel::NotMet) => "[mock:not_met]",
        (true, EligibilityLabel::Unknown) => "[mock:unknown]",
    }
}

const INCLUSION_PHRASES: [&str; 16] = [
    "Age 18 years or older at the time of consent",
    "Histologically confirmed diagnosis of the disease under study",
    "ECOG performance status of 0 or 1",
    "Adequate bone marrow function within 14 days before enrolment",
    "Adequate hepatic function with bilirubin up to 1.5 times the upper limit of normal",
    "Creatinine clearance of at least 50 mL/min",
    "Measurable disease per RECIST version 1.1",
    "Life expectancy of at least 12 weeks",
    "Archival tumour tissue available for biomarker analysis",
    "Recovery from toxicities of prior therapy to grade 1 or lower",
    "Disease progression on or after the most recent line of therapy",
    "Willing to use effective contraception during the study",
    "Able to swallow oral medication",
    "Signed informed consent before any study procedure",
    "At least one prior line of systemic treatment",
    "Left ventricular ejection fraction of at least 50%",
];

const EXCLUSION_PHRASES: [&str; 16] = [
    "Known untreated brain metastases",
    "Active infection requiring systemic therapy",
    "Pregnant or breastfeeding",
    "Major surgery within 4 weeks before the first dose",
    "History of another malignancy within the past 3 years",
    "Known human immunodeficiency virus infection",
    "Uncontrolled hypertension despite medical treatment",
    "QTc interval above 470 ms",
    "Prior organ or stem cell transplantation",
    "Active autoimmune disease requiring systemic treatment",
    "Known hypersensitivity to any component of the study drug",
    "Participation in another interventional study within 30 days",
    "Clinically significant cardiovascular disease within 6 months",
    "Interstitial lung disease or active pneumonitis",
    "Live vaccine within 30 days before the first dose",
    "Ongoing treatment with strong CYP3A4 inhibitors",
];

const UNPARSEABLE: [&str; 3] = [
    "Adults with the condition under study who have received at least one prior treatment can take part. \
People with active infection or who are pregnant cannot take part. Informed consent is required.",
    "Inclusion Criteria - Cohort A:\n\n  * Newly diagnosed disease\n  * No prior systemic treatment\n\n\
Exclusion Criteria - Cohort A:\n\n  * Active infection\n\n\
Inclusion Criteria - Cohort B:\n\n  * Relapsed disease after one prior line\n\n\
Exclusion Criteria - Cohort B:\n\n  * More than three prior lines of treatment\n",
    "Exclusion Criteria:\n\n  * Pregnant or breastfeeding\n  * Prior organ transplantation\n",
];

fn counts<T: Copy>(table: &[(T, usize)]) -> Vec<T> {
    table.iter().flat_map(|(k, n)| std::iter::repeat_n(*k, *n)).collect()
}

/// Deals `n` items round robin over `slots` (trial indices).
fn deal(n: usize, slots: &[usize], per_trial: &mut [Vec<Item>], kinds: &mut impl Iterator<Item = Item>) {
    assert!(!slots.is_empty());
    for i in 0..n {
        let trial = slots[i % slots.len()];
        per_trial[trial].push(kinds.next().expect("enough items of kind"));
    }
}

pub fn paper_fixture() -> PaperFixture {
    let profiles = crate::profiles();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);

    let mut trial_kinds = counts(&TRIAL_COUNTS);
    trial_kinds.shuffle(&mut rng);
    let n_trials = trial_kinds.len();

    let mut variant = 0usize;
    let mut pool_of = |kind: Kind| -> Vec<Item> {
        let n = KIND_COUNTS.iter().find(|(k, _)| *k == kind).map(|(_, n)| *n).unwrap_or(0);
        (0..n)
            .map(|_| {
                variant += 1;
                Item { kind, variant }
            })
            .collect()
    };
    let slots_of = |ks: &[TrialKind]| -> Vec<usize> { (0..n_trials).filter(|i| ks.contains(&trial_kinds[*i])).collect() };

    let mut per_trial: Vec<Vec<Item>> = vec![Vec::new(); n_trials];

    // Agreed dropouts only in agreed-excluded trials.
    let agreed = slots_of(&[TrialKind::AgreedExcluded]);
    deal(108, &agreed, &mut per_trial, &mut pool_of(Kind::AgreedDropout).into_iter());

    // Wrong dropouts: every wrongly excluded and wrong-reason trial needs
    // one; the rest spread over all model-excluded trials.
    let mut wrong = pool_of(Kind::WrongDropout);
    wrong.extend(pool_of(Kind::OverreachDropout));
    wrong.shuffle(&mut rng);
    let needs_wrong = slots_of(&[TrialKind::WronglyExcluded, TrialKind::ExcludedForWrongReason]);
    let model_excluded = slots_of(&[
        TrialKind::WronglyExcluded,
        TrialKind::ExcludedForWrongReason,
        TrialKind::AgreedExcluded,
    ]);
    let mut wrong = wrong.into_iter();
    deal(needs_wrong.len(), &needs_wrong, &mut per_trial, &mut wrong);
    let rest = wrong.len();
    deal(rest, &model_excluded, &mut per_trial, &mut wrong);

    // Missed dropouts: every wrongly admitted and wrong-reason trial needs
    // one; the rest spread over gold-excluded trials.
    let mut missed = pool_of(Kind::MissedDropout);
    missed.extend(pool_of(Kind::SkippedDropout));
    missed.shuffle(&mut rng);
    let needs_missed = slots_of(&[TrialKind::WronglyAdmitted, TrialKind::ExcludedForWrongReason]);
    let gold_excluded = slots_of(&[
        TrialKind::WronglyAdmitted,
        TrialKind::ExcludedForWrongReason,
        TrialKind::AgreedExcluded,
    ]);
    let mut missed = missed.into_iter();
    deal(needs_missed.len(), &needs_missed, &mut per_trial, &mut missed);
    let rest = missed.len();
    deal(rest, &gold_excluded, &mut per_trial, &mut missed);

    // Everything else is neutral and fills the remaining capacity.
    let mut neutral: Vec<Item> = [
        Kind::AgreedPass,
        Kind::UnknownPass,
        Kind::OverreachPass,
        Kind::SkippedPass,
        Kind::Unscreenable,
    ]
    .into_iter()
    .flat_map(&mut pool_of)
    .collect();
    neutral.shuffle(&mut rng);
    let mut neutral = neutral.into_iter();

    let mut trials = Vec::new();
    let mut records = Vec::new();
    let mut model = Vec::new();
    let mut trial_idx = 0usize;
    for (p_idx, (profile_id, n_eval, n_criteria, n_manual)) in LAYOUT.iter().enumerate() {
        let profile = profiles
            .iter()
            .find(|p| p.profile_id == *profile_id)
            .expect("layout profile exists");
        let code = profile.condition_code.clone();
        for t in 0..*n_eval {
            let size = n_criteria / n_eval + usize::from(t < n_criteria % n_eval);
            let items = &mut per_trial[trial_idx];
            assert!(items.len() < size, "trial {trial_idx} over capacity");
            while items.len() < size {
                items.push(neutral.next().expect("neutral pool covers remaining capacity"));
            }
            items.shuffle(&mut rng);
            let trial_id = format!("NCT04{:02}{:04}", p_idx + 1, t + 1);
            let (trial, gold) = build_trial(&trial_id, profile, &code, items);
            trials.push(trial);
            for (record, answer) in gold {
                records.push(record);
                model.push(answer);
            }
            trial_idx += 1;
        }
        for m in 0..*n_manual {
            trials.push(TrialRecord {
                trial_id: format!("NCT04{:02}{:04}", p_idx + 1, 101 + m),
                title: format!("{} study with registry-formatted eligibility {}", profile.condition_name, m + 1),
                condition_codes: vec![code.clone()],
                eligibility_text: UNPARSEABLE[m % UNPARSEABLE.len()].to_string(),
                min_age: None,
                max_age: None,
                accepted_sex: Default::default(),
                countries: vec![profile.country.clone()],
                status: TrialStatus::Recruiting,
            });
        }
        // A decoy the demographic prefilter must drop.
        let (min_age, max_age) = if profile.age >= 18 { (None, Some(17)) } else { (Some(18), None) };
        trials.push(TrialRecord {
            trial_id: format!("NCT04{:02}0201", p_idx + 1),
            title: format!("{} study in a different age group", profile.condition_name),
            condition_codes: vec![code.clone()],
            eligibility_text: "Inclusion Criteria:\n\n  * Confirmed diagnosis\n\nExclusion Criteria:\n\n  * Prior treatment\n"
                .into(),
            min_age,
            max_age,
            accepted_sex: Default::default(),
            countries: vec![],
            status: TrialStatus::Recruiting,
        });
    }
    assert_eq!(trial_idx, n_trials);
    assert!(neutral.next().is_none(), "neutral pool fully placed");

    assign_patterns(&mut records, &model);
    let gold = GoldSet::from_records(records).expect("generated gold is consistent");
    PaperFixture {
        profiles,
        trials,
        script: mock_script(),
        gold,
    }
}

type ModelAnswer = Option<(bool, EligibilityLabel)>;

fn build_trial(
    trial_id: &str,
    profile: &PatientProfile,
    code: &str,
    items: &[Item],
) -> (TrialRecord, Vec<(GoldRecord, ModelAnswer)>) {
    let n_inclusion = (items.len() * 9 / 20).max(1);
    let mut text = String::from("Inclusion Criteria:\n\n");
    let mut gold = Vec::new();
    let mut gold_eligible = true;
    for (i, item) in items.iter().enumerate() {
        let (section, ordinal) = if i < n_inclusion {
            (Section::Inclusion, i)
        } else {
            (Section::Exclusion, i - n_inclusion)
        };
        if i == n_inclusion {
            text.push_str("\nExclusion Criteria:\n\n");
        }
        let (m_scr, m_label, g_scr, g_label) = answers(*item, section);
        let phrase = match section {
            Section::Inclusion => INCLUSION_PHRASES[item.variant % INCLUSION_PHRASES.len()],
            Section::Exclusion => EXCLUSION_PHRASES[item.variant % EXCLUSION_PHRASES.len()],
        };
        text.push_str(&format!("  * {phrase} (item {}) {}\n", item.variant, tag(m_scr, m_label)));
        gold_eligible &= !is_dropout(section, g_label);
        let record = GoldRecord::Criterion(CriterionGold {
            profile_id: profile.profile_id.clone(),
            key: CriterionKey::new(trial_id, section, ordinal as u32),
            gold_screenable: g_scr,
            gold_label: g_label,
            error_pattern: ErrorPattern::None,
        });
        gold.push((record, Some((m_scr, m_label))));
    }
    let record = GoldRecord::Trial(TrialGold {
        profile_id: profile.profile_id.clone(),
        trial_id: trial_id.to_string(),
        gold_eligible,
    });
    gold.push((record, None));
    let trial = TrialRecord {
        trial_id: trial_id.to_string(),
        title: format!("{} treatment study {}", profile.condition_name, &trial_id[7..]),
        condition_codes: vec![code.to_string()],
        eligibility_text: text,
        min_age: None,
        max_age: None,
        accepted_sex: Default::default(),
        countries: vec![profile.country.clone()],
        status: TrialStatus::Recruiting,
    };
    (trial, gold)
}

/// Annotates error patterns in fixture order: among criteria screenable on
/// both sides the wrongly labeled ones come first, among model-only
/// criteria the dropouts come first.
fn assign_patterns(records: &mut [GoldRecord], model: &[ModelAnswer]) {
    let mut both: Vec<(bool, usize)> = Vec::new();
    let mut model_only: Vec<(bool, usize)> = Vec::new();
    for (i, (r, answer)) in records.iter().zip(model).enumerate() {
        let GoldRecord::Criterion(c) = r else { continue };
        let Some((m_scr, m_label)) = *answer else { continue };
        if m_scr && c.gold_screenable {
            both.push((m_label == c.gold_label, i));
        } else if m_scr {
            model_only.push((!is_dropout(c.key.section, m_label), i));
        }
    }
    both.sort_by_key(|(later, i)| (*later, *i));
    model_only.sort_by_key(|(later, i)| (*later, *i));
    let mut apply = |order: &[(bool, usize)], table: &[(ErrorPattern, usize)]| {
        for ((_, idx), pattern) in order.iter().zip(counts(table)) {
            if let GoldRecord::Criterion(c) = &mut records[*idx] {
                c.error_pattern = pattern;
            }
        }
    };
    apply(&both, &PATTERNS_BOTH_SCREENABLE);
    apply(&model_only, &PATTERNS_MODEL_ONLY);
}

fn mock_script() -> MockScript {
    let rule = |tag: &str, label: EligibilityLabel| MockRule {
        pattern: format!("*{tag}*"),
        profile: None,
        trial: None,
        section: None,
        screenable: true,
        label,
        reasoning: None,
        fail: None,
    };
    MockScript {
        rules: vec![
            rule("[mock:met]", EligibilityLabel::Met),
            rule("[mock:not_met]", EligibilityLabel::NotMet),
            rule("[mock:unknown]", EligibilityLabel::Unknown),
        ],
        noise: None,
    }
}
