//! Registry-style eligibility texts with reference segmentations.

use std::fs;

use serde::Deserialize;
use trialscreen_core::criteria::FailureReason;

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct CorpusGold {
    pub file: String,
    #[serde(default)]
    pub failure: Option<FailureReason>,
    #[serde(default)]
    pub inclusion: Option<usize>,
    #[serde(default)]
    pub exclusion: Option<usize>,
    #[serde(default)]
    pub first_inclusion: Option<String>,
    #[serde(default)]
    pub first_exclusion: Option<String>,
    /// 1-based line numbers of the section headings.
    #[serde(default)]
    pub heading_lines: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CorpusDoc {
    pub gold: CorpusGold,
    pub text: String,
}

impl CorpusDoc {
    pub fn id(&self) -> &str {
        self.gold.file.trim_end_matches(".txt")
    }
}

pub fn documents() -> Vec<CorpusDoc> {
    let dir = crate::data_dir().join("corpus");
    let gold = fs::read_to_string(dir.join("gold.jsonl")).expect("corpus gold file");
    gold.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let gold: CorpusGold = serde_json::from_str(l).expect("valid corpus gold line");
            let text = fs::read_to_string(dir.join(&gold.file)).expect("corpus document");
            CorpusDoc { gold, text }
        })
        .collect()
}
