//! Scripted backend driven by a rule file.
//!
//! ```toml
//! [[rule]]
//! pattern = "Age*"          # glob over the criterion text, case-insensitive
//! profile = "FP00?"         # optional glob over the profile id
//! trial = "NCT*"            # optional glob over the trial id
//! section = "inclusion"     # optional
//! screenable = true
//! label = "met"             # met | not_met | unknown
//! reasoning = "..."         # optional canned reasoning
//! fail = "reasoning"        # optional: selection | reasoning | labeling | combined | any
//!
//! [noise]                   # optional seeded perturbation
//! seed = 7
//! flip_rate_t0 = 0.02       # flip probability at temperature 0
//! flip_rate_t1 = 0.20       # flip probability at temperature 1
//! ```
//!
//! The first matching rule wins. A criterion that matches no rule is not
//! screenable. Answers use the same formats the prompts ask for, so the
//! regular parsers read them.

use std::path::Path;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wildmatch::WildMatch;

use super::parse::parse_label;
use super::{prompt_hash, BackendKind, CompletionBackend, CompletionRecord, ModelParams, PromptBundle, PromptStage};
use crate::error::GatewayError;
use crate::model::{Criterion, EligibilityLabel, Section};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailStage {
    Selection,
    Reasoning,
    Labeling,
    Combined,
    Any,
}

impl FailStage {
    fn covers(self, stage: PromptStage) -> bool {
        matches!(
            (self, stage),
            (FailStage::Any, _)
                | (FailStage::Selection, PromptStage::Selection)
                | (FailStage::Reasoning, PromptStage::Reasoning)
                | (FailStage::Labeling, PromptStage::Labeling)
                | (FailStage::Combined, PromptStage::Combined)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub pattern: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<Section>,
    #[serde(default = "yes")]
    pub screenable: bool,
    #[serde(default)]
    pub label: EligibilityLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<FailStage>,
}

fn yes() -> bool {
    true
}

impl MockRule {
    fn matches(&self, profile_id: &str, criterion: &Criterion) -> bool {
        let glob = |p: &str, s: &str| WildMatch::new_case_insensitive(p).matches(s);
        glob(&self.pattern, &criterion.text)
            && self.profile.as_deref().is_none_or(|p| glob(p, profile_id))
            && self.trial.as_deref().is_none_or(|p| glob(p, &criterion.key.trial_id))
            && self.section.is_none_or(|s| s == criterion.key.section)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub seed: u64,
    pub flip_rate_t0: f64,
    pub flip_rate_t1: f64,
}

impl NoiseConfig {
    /// Linear in temperature, clamped to [0, 1].
    pub fn flip_rate(&self, temperature: f64) -> f64 {
        (self.flip_rate_t0 + (self.flip_rate_t1 - self.flip_rate_t0) * temperature).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default, rename = "rule")]
    pub rules: Vec<MockRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
}

impl MockScript {
    pub fn from_toml_str(text: &str) -> Result<Self, GatewayError> {
        toml::from_str(text).map_err(|e| GatewayError::Config(format!("mock rules: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|source| GatewayError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))
    }

    pub fn rule_for(&self, profile_id: &str, criterion: &Criterion) -> Option<&MockRule> {
        self.rules.iter().find(|r| r.matches(profile_id, criterion))
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    script: MockScript,
    /// Added to the noise seed, so repeated runs draw different noise.
    seed_offset: u64,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self { script, seed_offset: 0 }
    }

    pub fn with_seed_offset(mut self, offset: u64) -> Self {
        self.seed_offset = offset;
        self
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    fn rng(&self, noise: &NoiseConfig, stage: &str, profile_id: &str, criterion: &Criterion) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(noise.seed.wrapping_add(self.seed_offset).to_le_bytes());
        for part in [stage, profile_id, &criterion.key.to_string()] {
            h.update(part.as_bytes());
            h.update([0]);
        }
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }

    fn screenable(&self, profile_id: &str, c: &Criterion, params: &ModelParams) -> bool {
        let base = self.script.rule_for(profile_id, c).is_some_and(|r| r.screenable);
        match &self.script.noise {
            Some(noise) => {
                let mut rng = self.rng(noise, "selection", profile_id, c);
                base ^ rng.gen_bool(noise.flip_rate(params.temperature))
            }
            None => base,
        }
    }

    fn label(&self, profile_id: &str, c: &Criterion, params: &ModelParams) -> EligibilityLabel {
        let base = self.script.rule_for(profile_id, c).map(|r| r.label).unwrap_or_default();
        match &self.script.noise {
            Some(noise) => {
                let mut rng = self.rng(noise, "label", profile_id, c);
                if rng.gen_bool(noise.flip_rate(params.temperature)) {
                    let others: Vec<_> = EligibilityLabel::ALL.into_iter().filter(|l| *l != base).collect();
                    others[rng.gen_range(0..others.len())]
                } else {
                    base
                }
            }
            None => base,
        }
    }

    fn reasoning(&self, profile_id: &str, c: &Criterion, params: &ModelParams) -> String {
        let label = self.label(profile_id, c, params);
        let body = self
            .script
            .rule_for(profile_id, c)
            .and_then(|r| r.reasoning.clone())
            .unwrap_or_else(|| format!("The summary was checked against the {} criterion.", c.key.section));
        format!("Reasoning: {}\nConclusion: {}", body.trim(), label.token())
    }

    fn answer(&self, bundle: &PromptBundle, params: &ModelParams) -> Result<String, GatewayError> {
        let ctx = &bundle.context;
        for c in &ctx.criteria {
            if let Some(stage) = self.script.rule_for(&ctx.profile_id, c).and_then(|r| r.fail) {
                if stage.covers(bundle.stage) {
                    return Err(GatewayError::Scripted(format!("{} at {:?}", c.key, bundle.stage)));
                }
            }
        }
        let single = || {
            ctx.criteria
                .first()
                .ok_or_else(|| GatewayError::InvalidRequest("prompt carries no criterion".into()))
        };
        Ok(match bundle.stage {
            PromptStage::Selection => {
                let picked: Vec<String> = ctx
                    .criteria
                    .iter()
                    .filter(|c| self.screenable(&ctx.profile_id, c, params))
                    .map(|c| c.key.ordinal.to_string())
                    .collect();
                if picked.is_empty() {
                    "Screenable: none".to_string()
                } else {
                    format!("Screenable: {}", picked.join(", "))
                }
            }
            PromptStage::Reasoning => self.reasoning(&ctx.profile_id, single()?, params),
            PromptStage::Labeling => match ctx.reasoning.as_deref().map(parse_label) {
                Some(Ok(label)) => format!("ANSWER: {}", label.token()),
                _ => "I cannot determine".to_string(),
            },
            PromptStage::Combined => {
                let c = single()?;
                let label = self.label(&ctx.profile_id, c, params);
                format!("{}\nANSWER: {}", self.reasoning(&ctx.profile_id, c, params), label.token())
            }
        })
    }
}

impl CompletionBackend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn complete(&self, bundle: &PromptBundle, params: &ModelParams) -> Result<CompletionRecord, GatewayError> {
        let raw_response = self.answer(bundle, params)?;
        Ok(CompletionRecord {
            prompt_hash: prompt_hash(&bundle.text, params),
            raw_response,
            backend: BackendKind::Mock,
            latency_ms: 0,
            created_at: DateTime::<Utc>::UNIX_EPOCH,
            retries: 0,
        })
    }
}
