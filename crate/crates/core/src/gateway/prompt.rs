use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{PromptBundle, PromptContext, PromptStage};
use crate::error::GatewayError;
use crate::model::{Criterion, PatientProfile, Section};

const BUILTIN_TEMPLATES: &str = include_str!("../../templates/prompts.toml");

/// The one worked example shown in every prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub id: String,
    pub section: Section,
    pub summary: String,
    pub criteria: Vec<String>,
    pub selection_answer: String,
    pub criterion: String,
    pub reasoning: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub version: u32,
    pub selection: String,
    pub selection_example: String,
    pub reasoning: String,
    pub reasoning_example: String,
    pub labeling: String,
    pub labeling_example: String,
    pub combined: String,
    pub combined_example: String,
    pub exemplar: Exemplar,
}

impl PromptTemplates {
    pub fn builtin() -> &'static PromptTemplates {
        static T: OnceLock<PromptTemplates> = OnceLock::new();
        T.get_or_init(|| toml::from_str(BUILTIN_TEMPLATES).expect("bundled prompt templates"))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|source| GatewayError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBudget {
    /// Criteria per selection call.
    pub max_batch: usize,
    pub max_prompt_tokens: usize,
}

impl Default for PromptBudget {
    fn default() -> Self {
        Self {
            max_batch: 20,
            max_prompt_tokens: 3000,
        }
    }
}

/// Rough token count: one token per four characters.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Single-pass `{{name}}` substitution. Unknown placeholders are left as is.
fn render(template: &str, vars: &HashMap<&str, &str>) -> String {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let name = after[..end].trim();
                match vars.get(name) {
                    Some(value) => out.push_str(value),
                    None => out.push_str(&rest[start..start + 2 + end + 2]),
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out.trim().to_string()
}

fn section_title(section: Section) -> &'static str {
    match section {
        Section::Inclusion => "Inclusion",
        Section::Exclusion => "Exclusion",
    }
}

fn enumerate<'a>(items: impl Iterator<Item = (u32, &'a str)>) -> String {
    items
        .map(|(i, text)| format!("[{i}] {text}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone)]
pub struct PromptBuilder {
    templates: PromptTemplates,
    budget: PromptBudget,
}

impl Default for PromptBuilder {
    fn default() -> Self {
        Self::new(PromptTemplates::builtin().clone(), PromptBudget::default())
    }
}

impl PromptBuilder {
    pub fn new(templates: PromptTemplates, budget: PromptBudget) -> Self {
        Self { templates, budget }
    }

    pub fn with_exemplar(mut self, exemplar: Exemplar) -> Self {
        self.templates.exemplar = exemplar;
        self
    }

    pub fn with_budget(mut self, budget: PromptBudget) -> Self {
        self.budget = budget;
        self
    }

    pub fn exemplar(&self) -> &Exemplar {
        &self.templates.exemplar
    }

    pub fn budget(&self) -> PromptBudget {
        self.budget
    }

    fn exemplar_block(&self, stage: PromptStage) -> String {
        let ex = &self.templates.exemplar;
        let criteria = enumerate(ex.criteria.iter().enumerate().map(|(i, c)| (i as u32, c.as_str())));
        let vars = HashMap::from([
            ("summary", ex.summary.trim()),
            ("section", ex.section.as_str()),
            ("criteria", criteria.as_str()),
            ("answer", ex.selection_answer.as_str()),
            ("criterion", ex.criterion.as_str()),
            ("reasoning", ex.reasoning.trim()),
            ("label", ex.label.as_str()),
        ]);
        let template = match stage {
            PromptStage::Selection => &self.templates.selection_example,
            PromptStage::Reasoning => &self.templates.reasoning_example,
            PromptStage::Labeling => &self.templates.labeling_example,
            PromptStage::Combined => &self.templates.combined_example,
        };
        render(template, &vars)
    }

    fn check_budget(&self, text: &str, criterion: &Criterion) -> Result<usize, GatewayError> {
        let tokens = estimate_tokens(text);
        if tokens > self.budget.max_prompt_tokens {
            return Err(GatewayError::PromptTooLarge {
                key: criterion.key.clone(),
                tokens,
                budget: self.budget.max_prompt_tokens,
            });
        }
        Ok(tokens)
    }

    fn selection_text(&self, profile: &PatientProfile, criteria: &[Criterion]) -> String {
        let section = criteria[0].key.section;
        let exemplar = self.exemplar_block(PromptStage::Selection);
        let listed = enumerate(criteria.iter().map(|c| (c.key.ordinal, c.text.as_str())));
        let vars = HashMap::from([
            ("exemplar", exemplar.as_str()),
            ("summary", profile.medical_summary.trim()),
            ("section", section.as_str()),
            ("section_title", section_title(section)),
            ("criteria", listed.as_str()),
        ]);
        render(&self.templates.selection, &vars)
    }

    fn check_batch(criteria: &[Criterion]) -> Result<(), GatewayError> {
        let Some(first) = criteria.first() else {
            return Err(GatewayError::InvalidRequest("selection needs at least one criterion".into()));
        };
        if criteria
            .iter()
            .any(|c| c.key.trial_id != first.key.trial_id || c.key.section != first.key.section)
        {
            return Err(GatewayError::InvalidRequest(
                "selection batch mixes trials or sections".into(),
            ));
        }
        Ok(())
    }

    /// One selection prompt over exactly these criteria.
    pub fn build_selection_prompt(
        &self,
        profile: &PatientProfile,
        criteria: &[Criterion],
    ) -> Result<PromptBundle, GatewayError> {
        Self::check_batch(criteria)?;
        let text = self.selection_text(profile, criteria);
        let token_estimate = self.check_budget(&text, &criteria[0])?;
        Ok(PromptBundle {
            stage: PromptStage::Selection,
            text,
            exemplar_id: self.templates.exemplar.id.clone(),
            criterion_keys: criteria.iter().map(|c| c.key.clone()).collect(),
            token_estimate,
            context: PromptContext {
                profile_id: profile.profile_id.clone(),
                criteria: criteria.to_vec(),
                reasoning: None,
            },
        })
    }

    /// Selection prompts for one trial section, split into consecutive
    /// batches that respect both the batch size and the token budget.
    pub fn build_selection_prompts(
        &self,
        profile: &PatientProfile,
        criteria: &[Criterion],
    ) -> Result<Vec<PromptBundle>, GatewayError> {
        Self::check_batch(criteria)?;
        let max_batch = self.budget.max_batch.max(1);
        let mut bundles = Vec::new();
        let mut start = 0;
        while start < criteria.len() {
            // Grow the batch while it fits; a lone criterion must fit on its own.
            let mut end = start + 1;
            let mut best = self.build_selection_prompt(profile, &criteria[start..end])?;
            while end < criteria.len() && end - start < max_batch {
                match self.build_selection_prompt(profile, &criteria[start..end + 1]) {
                    Ok(bundle) => {
                        best = bundle;
                        end += 1;
                    }
                    Err(GatewayError::PromptTooLarge { .. }) => break,
                    Err(e) => return Err(e),
                }
            }
            bundles.push(best);
            start = end;
        }
        Ok(bundles)
    }

    pub fn build_reasoning_prompt(
        &self,
        profile: &PatientProfile,
        criterion: &Criterion,
    ) -> Result<PromptBundle, GatewayError> {
        self.single_criterion(PromptStage::Reasoning, &self.templates.reasoning, Some(profile), criterion, None)
    }

    pub fn build_labeling_prompt(&self, reasoning_text: &str, criterion: &Criterion) -> Result<PromptBundle, GatewayError> {
        self.single_criterion(
            PromptStage::Labeling,
            &self.templates.labeling,
            None,
            criterion,
            Some(reasoning_text),
        )
    }

    pub fn build_combined_prompt(
        &self,
        profile: &PatientProfile,
        criterion: &Criterion,
    ) -> Result<PromptBundle, GatewayError> {
        self.single_criterion(PromptStage::Combined, &self.templates.combined, Some(profile), criterion, None)
    }

    fn single_criterion(
        &self,
        stage: PromptStage,
        template: &str,
        profile: Option<&PatientProfile>,
        criterion: &Criterion,
        reasoning: Option<&str>,
    ) -> Result<PromptBundle, GatewayError> {
        let exemplar = self.exemplar_block(stage);
        let mut vars = HashMap::from([
            ("exemplar", exemplar.as_str()),
            ("section", criterion.key.section.as_str()),
            ("criterion", criterion.text.as_str()),
        ]);
        if let Some(p) = profile {
            vars.insert("summary", p.medical_summary.trim());
        }
        if let Some(r) = reasoning {
            vars.insert("reasoning", r.trim());
        }
        let text = render(template, &vars);
        let token_estimate = self.check_budget(&text, criterion)?;
        Ok(PromptBundle {
            stage,
            text,
            exemplar_id: self.templates.exemplar.id.clone(),
            criterion_keys: vec![criterion.key.clone()],
            token_estimate,
            context: PromptContext {
                profile_id: profile.map(|p| p.profile_id.clone()).unwrap_or_default(),
                criteria: vec![criterion.clone()],
                reasoning: reasoning.map(String::from),
            },
        })
    }
}
