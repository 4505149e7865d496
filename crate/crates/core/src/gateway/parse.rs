use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::LabelParseError;
use crate::model::EligibilityLabel;

/// Outcome of reading a selection answer against the offered ordinals.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SelectionParse {
    /// Offered ordinals the model selected, ascending.
    pub selected: Vec<u32>,
    /// Numbers in the answer that were not offered.
    pub out_of_range: Vec<u64>,
    /// The answer had neither numbers nor an explicit "none".
    pub unparseable: bool,
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+").expect("valid regex"))
}

fn none_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bnone\b").expect("valid regex"))
}

fn label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(not[\s_-]*met|unmet|met|unknown)\b").expect("valid regex"))
}

/// Reads a selection answer. When a line starts with `Screenable:` or
/// `Answer:` only that line is read; otherwise every integer in the answer
/// counts.
pub fn parse_selection(answer: &str, offered: &[u32]) -> SelectionParse {
    let offered: BTreeSet<u32> = offered.iter().copied().collect();
    let answer_line = answer.lines().rev().find(|l| {
        let l = l.trim_start().to_ascii_lowercase();
        l.starts_with("screenable:") || l.starts_with("answer:")
    });
    let scope = match answer_line {
        Some(line) => &line[line.find(':').map(|i| i + 1).unwrap_or(0)..],
        None => answer,
    };
    let mut selected = BTreeSet::new();
    let mut out_of_range = Vec::new();
    let mut any_number = false;
    for m in number_re().find_iter(scope) {
        any_number = true;
        match m.as_str().parse::<u64>() {
            Ok(n) if n <= u32::MAX as u64 && offered.contains(&(n as u32)) => {
                selected.insert(n as u32);
            }
            Ok(n) => out_of_range.push(n),
            Err(_) => out_of_range.push(u64::MAX),
        }
    }
    SelectionParse {
        selected: selected.into_iter().collect(),
        out_of_range,
        unparseable: !any_number && !none_re().is_match(scope),
    }
}

/// Extracts the label from a labeling answer. The last label token wins, so
/// "ANSWER: not met" after a discussion of what is met reads as not met.
pub fn parse_label(answer: &str) -> Result<EligibilityLabel, LabelParseError> {
    let m = label_re().find_iter(answer).last().ok_or(LabelParseError)?;
    let token = m.as_str().to_ascii_lowercase();
    Ok(if token == "met" {
        EligibilityLabel::Met
    } else if token == "unknown" {
        EligibilityLabel::Unknown
    } else {
        EligibilityLabel::NotMet
    })
}
