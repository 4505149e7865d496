//! Clinical-trial eligibility pre-screening.
//!
//! The pipeline ingests trial records, splits their eligibility text into
//! criteria, asks a completion backend which criteria are screenable and
//! how each one is met, derives trial verdicts, and queues every dropout
//! criterion for physician review. The evaluation module scores a run
//! against gold annotations.

pub mod criteria;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod export;
pub mod gateway;
pub mod io;
pub mod model;
pub mod registry;

pub use error::{EngineError, EvalError, ExportError, GatewayError, IngestError, ModelError};
pub use model::{
    demographic_prefilter, is_dropout, trial_verdict, AcceptedSex, Criterion, CriterionAssessment,
    CriterionKey, Demographics, EligibilityLabel, ManualReason, PatientProfile, Provenance, ReviewOverride,
    Section, Sex, TrialRecord, TrialStatus, TrialVerdict,
};
