//! Eligibility-text segmentation.
//!
//! A trial's free-text eligibility block is split into an inclusion and an
//! exclusion body by heading lines, and each body is segmented into one
//! criterion per top-level list item. Continuation lines and nested
//! sub-items fold into the item they belong to, so no source text is lost.
//! Heading variants and marker glyphs come from `data/parser_rules.toml`.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::{Criterion, CriterionKey, Section, TrialRecord};

const BUILTIN_RULES: &str = include_str!("../data/parser_rules.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    NoHeadings,
    AmbiguousHeadings,
    EmptySections,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub trial_id: String,
    pub reason: FailureReason,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    /// Non-heading text before the first heading was not assigned to a section.
    PreambleDiscarded,
    /// A nested item was merged into its parent criterion.
    FoldedSubItem,
    /// A "Group label:" line was prefixed to the following criterion.
    GroupLabel,
    /// Unmarked text ahead of the first list item became its own criterion.
    LeadIn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostic {
    pub kind: DiagnosticKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<Section>,
    /// 1-based line within the source text or section body.
    pub line: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedCriteria {
    pub trial_id: String,
    pub inclusion: Vec<Criterion>,
    pub exclusion: Vec<Criterion>,
    #[serde(default)]
    pub diagnostics: Vec<ParseDiagnostic>,
}

impl ParsedCriteria {
    pub fn len(&self) -> usize {
        self.inclusion.len() + self.exclusion.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn section(&self, section: Section) -> &[Criterion] {
        match section {
            Section::Inclusion => &self.inclusion,
            Section::Exclusion => &self.exclusion,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Criterion> {
        self.inclusion.iter().chain(self.exclusion.iter())
    }

    /// Renders the criteria back into a canonical two-heading document.
    pub fn render(&self) -> String {
        let mut out = String::from("Inclusion Criteria:\n");
        for c in &self.inclusion {
            out.push_str("- ");
            out.push_str(&c.text);
            out.push('\n');
        }
        out.push_str("\nExclusion Criteria:\n");
        for c in &self.exclusion {
            out.push_str("- ");
            out.push_str(&c.text);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectionBodies {
    pub inclusion: String,
    pub exclusion: String,
    pub diagnostics: Vec<ParseDiagnostic>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitFailure {
    pub reason: FailureReason,
    pub detail: String,
}

#[derive(Debug, Deserialize)]
struct RulesFile {
    version: u32,
    headings: HeadingsFile,
    markers: MarkersFile,
}

#[derive(Debug, Deserialize)]
struct HeadingsFile {
    inclusion: Vec<String>,
    exclusion: Vec<String>,
    qualifier_openers: Vec<String>,
    max_heading_len: usize,
}

#[derive(Debug, Deserialize)]
struct MarkersFile {
    bullets: Vec<String>,
    sub_bullets: Vec<String>,
    enumerator: String,
    tab_width: usize,
}

/// Compiled heading and marker rules.
#[derive(Debug, Clone)]
pub struct ParserRules {
    pub version: u32,
    headings: Vec<(String, Section)>,
    qualifier_openers: Vec<String>,
    max_heading_len: usize,
    bullets: Vec<String>,
    sub_bullets: Vec<String>,
    enumerator: Regex,
    tab_width: usize,
    exclusion_token: Regex,
}

impl ParserRules {
    pub fn from_toml(src: &str) -> Result<Self, String> {
        let file: RulesFile = toml::from_str(src).map_err(|e| e.to_string())?;
        let mut headings: Vec<(String, Section)> = file
            .headings
            .inclusion
            .into_iter()
            .map(|h| (h.to_lowercase(), Section::Inclusion))
            .chain(
                file.headings
                    .exclusion
                    .into_iter()
                    .map(|h| (h.to_lowercase(), Section::Exclusion)),
            )
            .collect();
        // Longest variant first so "key inclusion criteria" wins over "inclusion".
        headings.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        let enumerator = Regex::new(&file.markers.enumerator).map_err(|e| e.to_string())?;
        let mut bullets = file.markers.bullets;
        bullets.sort_by_key(|b| std::cmp::Reverse(b.len()));
        Ok(Self {
            version: file.version,
            headings,
            qualifier_openers: file.headings.qualifier_openers,
            max_heading_len: file.headings.max_heading_len,
            bullets,
            sub_bullets: file.markers.sub_bullets,
            enumerator,
            tab_width: file.markers.tab_width.max(1),
            exclusion_token: Regex::new(r"(?i)\bexclusion\b").expect("static regex"),
        })
    }

    pub fn builtin() -> &'static ParserRules {
        static RULES: OnceLock<ParserRules> = OnceLock::new();
        RULES.get_or_init(|| ParserRules::from_toml(BUILTIN_RULES).expect("bundled parser rules"))
    }
}

impl Default for ParserRules {
    fn default() -> Self {
        Self::builtin().clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct HeadingMatch {
    section: Section,
    inline: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MarkerFamily {
    Bullet,
    Arabic,
    Alpha,
}

#[derive(Debug, Clone)]
struct Marker {
    family: MarkerFamily,
    glyph: String,
}

#[derive(Debug, Clone)]
struct BodyLine<'a> {
    number: usize,
    indent: usize,
    content: &'a str,
    marker: Option<Marker>,
    /// Content with the marker removed.
    rest: &'a str,
}

fn normalize_heading(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut last_space = true;
    for ch in line.chars() {
        let ch = match ch {
            '*' | '_' | '#' => continue,
            '\u{2010}'..='\u{2015}' | '\u{2212}' => '-',
            c if c.is_whitespace() => ' ',
            c => c,
        };
        if ch == ' ' {
            if !last_space {
                out.push(' ');
            }
            last_space = true;
        } else {
            out.extend(ch.to_lowercase());
            last_space = false;
        }
    }
    out.trim().to_string()
}

/// Byte offset just past the `n`-th (1-based) colon of `s`.
fn after_nth_colon(s: &str, n: usize) -> Option<&str> {
    let (idx, _) = s.match_indices(':').nth(n.checked_sub(1)?)?;
    Some(&s[idx + 1..])
}

/// Width of leading whitespace, counting tabs as `tab_width` columns.
fn indent_width(line: &str, tab_width: usize) -> usize {
    let mut width = 0;
    for ch in line.chars() {
        match ch {
            '\t' => width += tab_width,
            c if c.is_whitespace() => width += 1,
            _ => break,
        }
    }
    width
}

/// Segments eligibility text with a given rule set.
#[derive(Debug, Clone, Default)]
pub struct CriteriaParser {
    rules: ParserRules,
}

impl CriteriaParser {
    pub fn new(rules: ParserRules) -> Self {
        Self { rules }
    }

    pub fn rules(&self) -> &ParserRules {
        &self.rules
    }

    fn detect_heading(&self, line: &str) -> Option<HeadingMatch> {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            return None;
        }
        let norm = normalize_heading(trimmed);
        for (variant, section) in &self.rules.headings {
            let Some(rest) = norm.strip_prefix(variant.as_str()) else {
                continue;
            };
            if rest.chars().next().is_some_and(|c| c.is_alphanumeric()) {
                continue;
            }
            let colons_in_variant = variant.matches(':').count();
            let rest_trim = rest.trim_start();
            let head_len = match rest.find(':') {
                Some(i) => variant.len() + i,
                None => norm.len(),
            };
            if head_len > self.rules.max_heading_len {
                continue;
            }
            let inline_after = |extra_colons: usize| {
                after_nth_colon(trimmed, colons_in_variant + extra_colons)
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
            };
            if rest_trim.is_empty() || rest_trim == "." || rest_trim == ":" {
                return Some(HeadingMatch {
                    section: *section,
                    inline: None,
                });
            }
            if rest_trim.starts_with(':') {
                return Some(HeadingMatch {
                    section: *section,
                    inline: inline_after(1),
                });
            }
            // Qualified headings ("Inclusion Criteria (Part A):") only for the
            // "... criteria" variants; bare "Inclusion" followed by prose is text.
            if !variant.contains("criteri") {
                continue;
            }
            let qualifier = rest_trim.split(':').next().unwrap_or_default();
            if qualifier.len() > 60 || !self.is_qualifier(qualifier) {
                continue;
            }
            let inline = if rest_trim.contains(':') {
                inline_after(1)
            } else {
                None
            };
            return Some(HeadingMatch {
                section: *section,
                inline,
            });
        }
        None
    }

    fn is_qualifier(&self, qualifier: &str) -> bool {
        self.rules.qualifier_openers.iter().any(|opener| {
            let Some(after) = qualifier.strip_prefix(opener.as_str()) else {
                return false;
            };
            let wordlike = opener.chars().all(|c| c.is_alphabetic());
            !wordlike || after.is_empty() || after.starts_with(|c: char| !c.is_alphanumeric())
        })
    }

    /// Splits eligibility text into inclusion and exclusion bodies. Heading
    /// lines are not part of either body; text after a heading's colon is.
    pub fn split_sections(&self, text: &str) -> Result<SectionBodies, SplitFailure> {
        let lines: Vec<&str> = text.lines().collect();
        let headings: Vec<(usize, HeadingMatch)> = lines
            .iter()
            .enumerate()
            .filter_map(|(i, l)| self.detect_heading(l).map(|h| (i, h)))
            .collect();
        let count = |s: Section| headings.iter().filter(|(_, h)| h.section == s).count();
        let (n_inc, n_exc) = (count(Section::Inclusion), count(Section::Exclusion));

        if n_inc == 0 {
            return Err(SplitFailure {
                reason: FailureReason::NoHeadings,
                detail: if n_exc > 0 {
                    "exclusion heading present but no inclusion heading".into()
                } else {
                    "no inclusion or exclusion heading found".into()
                },
            });
        }
        if n_inc > 1 || n_exc > 1 {
            return Err(SplitFailure {
                reason: FailureReason::AmbiguousHeadings,
                detail: format!("{n_inc} inclusion and {n_exc} exclusion headings"),
            });
        }
        if n_exc == 0 && self.rules.exclusion_token.is_match(text) {
            return Err(SplitFailure {
                reason: FailureReason::AmbiguousHeadings,
                detail: "exclusion criteria mentioned without a separate exclusion heading".into(),
            });
        }

        let mut diagnostics = Vec::new();
        let first_heading = headings[0].0;
        if let Some(pos) = lines[..first_heading].iter().position(|l| !l.trim().is_empty()) {
            diagnostics.push(ParseDiagnostic {
                kind: DiagnosticKind::PreambleDiscarded,
                section: None,
                line: pos + 1,
                detail: lines[pos].trim().to_string(),
            });
        }

        let body_of = |section: Section| -> String {
            let Some(idx) = headings.iter().position(|(_, h)| h.section == section) else {
                return String::new();
            };
            let (start, heading) = &headings[idx];
            let end = headings.get(idx + 1).map(|(i, _)| *i).unwrap_or(lines.len());
            let mut body: Vec<&str> = Vec::new();
            if let Some(inline) = &heading.inline {
                body.push(inline.as_str());
            }
            body.extend(lines[start + 1..end].iter().map(|l| l.trim_end()));
            while body.first().is_some_and(|l| l.trim().is_empty()) {
                body.remove(0);
            }
            while body.last().is_some_and(|l| l.trim().is_empty()) {
                body.pop();
            }
            body.join("\n")
        };
        let inclusion = body_of(Section::Inclusion);
        let exclusion = body_of(Section::Exclusion);
        if inclusion.trim().is_empty() && exclusion.trim().is_empty() {
            return Err(SplitFailure {
                reason: FailureReason::EmptySections,
                detail: "headings found but both sections are empty".into(),
            });
        }
        Ok(SectionBodies {
            inclusion,
            exclusion,
            diagnostics,
        })
    }

    fn detect_marker<'a>(&self, content: &'a str) -> Option<(Marker, &'a str)> {
        for glyph in &self.rules.bullets {
            let Some(after) = content.strip_prefix(glyph.as_str()) else {
                continue;
            };
            let ascii = glyph.is_ascii();
            if after.is_empty() && !glyph.chars().any(char::is_alphanumeric) {
                // A bare glyph on its own line still opens an item.
                return Some((
                    Marker {
                        family: MarkerFamily::Bullet,
                        glyph: glyph.clone(),
                    },
                    after,
                ));
            }
            if ascii && !after.starts_with(char::is_whitespace) {
                continue;
            }
            // Guard against "-->" and "**bold**" style runs.
            if after.starts_with(glyph.as_str()) {
                continue;
            }
            return Some((
                Marker {
                    family: MarkerFamily::Bullet,
                    glyph: glyph.clone(),
                },
                after.trim_start(),
            ));
        }
        let caps = self.rules.enumerator.captures(content)?;
        let tok = caps.name("tok")?.as_str();
        let family = if tok.chars().all(|c| c.is_ascii_digit()) {
            MarkerFamily::Arabic
        } else {
            MarkerFamily::Alpha
        };
        let end = caps.get(0)?.end();
        Some((
            Marker {
                family,
                glyph: String::new(),
            },
            content[end..].trim_start(),
        ))
    }

    fn classify<'a>(&self, body: &'a str) -> Vec<BodyLine<'a>> {
        body.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let content = l.trim();
                let (marker, rest) = match self.detect_marker(content) {
                    Some((m, rest)) => (Some(m), rest),
                    None => (None, content),
                };
                BodyLine {
                    number: i + 1,
                    indent: indent_width(l, self.rules.tab_width),
                    content,
                    marker,
                    rest,
                }
            })
            .collect()
    }

    /// One criterion per top-level list item, in source order.
    pub fn segment_criteria(&self, trial_id: &str, section: Section, body: &str) -> Vec<Criterion> {
        self.segment_with_diagnostics(trial_id, section, body).0
    }

    pub fn segment_with_diagnostics(
        &self,
        trial_id: &str,
        section: Section,
        body: &str,
    ) -> (Vec<Criterion>, Vec<ParseDiagnostic>) {
        let lines = self.classify(body);
        let mut diagnostics = Vec::new();
        if lines.is_empty() {
            return (Vec::new(), diagnostics);
        }

        let marked: Vec<&BodyLine> = lines.iter().filter(|l| l.marker.is_some()).collect();
        let has_markers = !marked.is_empty();
        let top_indent = if has_markers {
            marked.iter().map(|l| l.indent).min().unwrap_or(0)
        } else {
            lines.iter().map(|l| l.indent).min().unwrap_or(0)
        };
        let top_marker = marked
            .iter()
            .find(|l| l.indent <= top_indent + 1)
            .and_then(|l| l.marker.clone());
        let top_is_sub_glyph = top_marker
            .as_ref()
            .is_some_and(|m| self.rules.sub_bullets.contains(&m.glyph));

        let is_item_start = |line: &BodyLine| -> bool {
            if line.indent > top_indent + 1 {
                return false;
            }
            match (&line.marker, &top_marker) {
                (Some(m), Some(top)) => {
                    m.family == top.family
                        && (m.family != MarkerFamily::Bullet
                            || top_is_sub_glyph
                            || !self.rules.sub_bullets.contains(&m.glyph))
                }
                (None, None) => true,
                _ => false,
            }
        };

        let mut texts: Vec<String> = Vec::new();
        let mut current: Option<String> = None;
        let mut pending_label: Option<String> = None;

        for (idx, line) in lines.iter().enumerate() {
            let next_starts_item = lines.get(idx + 1).is_some_and(&is_item_start);
            let is_label = line.marker.is_none()
                && line.indent <= top_indent + 1
                && line.content.ends_with(':')
                && next_starts_item;
            if is_label {
                if let Some(done) = current.take() {
                    texts.push(done);
                }
                diagnostics.push(ParseDiagnostic {
                    kind: DiagnosticKind::GroupLabel,
                    section: Some(section),
                    line: line.number,
                    detail: line.content.to_string(),
                });
                pending_label = Some(match pending_label.take() {
                    Some(prev) => format!("{prev} {}", line.content),
                    None => line.content.to_string(),
                });
                continue;
            }
            if is_item_start(line) {
                if let Some(done) = current.take() {
                    texts.push(done);
                }
                let mut text = pending_label.take().unwrap_or_default();
                append_words(&mut text, line.rest);
                current = Some(text);
                continue;
            }
            match current.as_mut() {
                Some(text) => {
                    if line.marker.is_some() {
                        diagnostics.push(ParseDiagnostic {
                            kind: DiagnosticKind::FoldedSubItem,
                            section: Some(section),
                            line: line.number,
                            detail: line.rest.to_string(),
                        });
                    }
                    append_words(text, line.rest);
                }
                None => {
                    diagnostics.push(ParseDiagnostic {
                        kind: DiagnosticKind::LeadIn,
                        section: Some(section),
                        line: line.number,
                        detail: line.content.to_string(),
                    });
                    let mut text = pending_label.take().unwrap_or_default();
                    append_words(&mut text, line.rest);
                    current = Some(text);
                }
            }
        }
        if let Some(done) = current.take() {
            texts.push(done);
        }
        if let Some(label) = pending_label.take() {
            texts.push(label);
        }

        let criteria = texts
            .into_iter()
            .filter(|t| !t.trim().is_empty())
            .enumerate()
            .map(|(i, text)| Criterion {
                key: CriterionKey::new(trial_id, section, i as u32),
                text,
            })
            .collect();
        (criteria, diagnostics)
    }

    pub fn parse_trial(&self, trial: &TrialRecord) -> Result<ParsedCriteria, ParseFailure> {
        self.parse_text(&trial.trial_id, &trial.eligibility_text)
    }

    pub fn parse_text(&self, trial_id: &str, text: &str) -> Result<ParsedCriteria, ParseFailure> {
        let bodies = self.split_sections(text).map_err(|f| ParseFailure {
            trial_id: trial_id.to_string(),
            reason: f.reason,
            detail: f.detail,
        })?;
        let mut diagnostics = bodies.diagnostics;
        let (inclusion, d_inc) = self.segment_with_diagnostics(trial_id, Section::Inclusion, &bodies.inclusion);
        let (exclusion, d_exc) = self.segment_with_diagnostics(trial_id, Section::Exclusion, &bodies.exclusion);
        diagnostics.extend(d_inc);
        diagnostics.extend(d_exc);
        if inclusion.is_empty() && exclusion.is_empty() {
            return Err(ParseFailure {
                trial_id: trial_id.to_string(),
                reason: FailureReason::EmptySections,
                detail: "sections contain no criterion text".into(),
            });
        }
        Ok(ParsedCriteria {
            trial_id: trial_id.to_string(),
            inclusion,
            exclusion,
            diagnostics,
        })
    }
}

fn append_words(text: &mut String, words: &str) {
    let words = words.trim();
    if words.is_empty() {
        return;
    }
    if !text.is_empty() {
        text.push(' ');
    }
    text.push_str(words);
}

pub fn split_sections(text: &str) -> Result<SectionBodies, SplitFailure> {
    default_parser().split_sections(text)
}

pub fn segment_criteria(trial_id: &str, section: Section, body: &str) -> Vec<Criterion> {
    default_parser().segment_criteria(trial_id, section, body)
}

pub fn parse_trial(trial: &TrialRecord) -> Result<ParsedCriteria, ParseFailure> {
    default_parser().parse_trial(trial)
}

fn default_parser() -> &'static CriteriaParser {
    static PARSER: OnceLock<CriteriaParser> = OnceLock::new();
    PARSER.get_or_init(|| CriteriaParser::new(ParserRules::builtin().clone()))
}
