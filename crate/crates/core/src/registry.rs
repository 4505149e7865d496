//! Trial and profile ingestion.
//!
//! Trials come either from a line-delimited fixture file (one
//! [`TrialRecord`] per line) or from a registry HTTP API shaped like the
//! ClinicalTrials.gov v2 `studies` endpoint. Registry responses are cached
//! on disk under a hash of the query so experiments can be replayed offline.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use tracing::{debug, warn};

use crate::error::IngestError;
use crate::io::{jsonl_lines, write_json_atomic, write_jsonl_atomic};
use crate::model::{AcceptedSex, Demographics, PatientProfile, Sex, TrialRecord, TrialStatus};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryQuery {
    /// Condition name or code. `*` matches every fixture record.
    pub condition: String,
    #[serde(default)]
    pub country: Option<String>,
    #[serde(default)]
    pub age: Option<u32>,
    #[serde(default)]
    pub sex: Option<Sex>,
    pub max_results: usize,
}

impl RegistryQuery {
    pub fn for_profile(profile: &PatientProfile, max_results: usize) -> Self {
        Self {
            condition: profile.condition_code.clone(),
            country: Some(profile.country.clone()),
            age: Some(profile.age),
            sex: Some(profile.sex),
            max_results,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.condition.trim().is_empty() {
            return Err(IngestError::Query("condition must not be empty".into()));
        }
        if self.max_results == 0 {
            return Err(IngestError::Query("max_results must be at least 1".into()));
        }
        Ok(())
    }

    pub fn demographics(&self) -> Demographics {
        Demographics {
            age: self.age,
            sex: self.sex,
            country: self.country.clone(),
        }
    }

    fn cache_key(&self, endpoint: &RegistryEndpoint) -> String {
        let mut h = Sha256::new();
        h.update(endpoint.base_url.as_bytes());
        h.update([0]);
        h.update(serde_json::to_vec(self).expect("query serializes"));
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestFailure {
    pub source_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub fetched: usize,
    pub prefilter_passed: usize,
    /// Records dropped because their trial_id was already seen.
    pub deduplicated: usize,
    pub failures: Vec<IngestFailure>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Query-parameter names used when talking to the registry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamMapping {
    pub condition: String,
    pub country: Option<String>,
    pub page_size: String,
    pub page_token: String,
}

impl Default for ParamMapping {
    fn default() -> Self {
        Self {
            condition: "query.cond".into(),
            country: Some("query.locn".into()),
            page_size: "pageSize".into(),
            page_token: "pageToken".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEndpoint {
    pub base_url: String,
    #[serde(default)]
    pub params: ParamMapping,
    /// Extra parameters sent with every request.
    #[serde(default)]
    pub static_params: BTreeMap<String, String>,
    #[serde(default = "default_page_size")]
    pub page_size: usize,
    /// Environment variable holding an API key, if the registry needs one.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_api_key_header")]
    pub api_key_header: String,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
}

fn default_page_size() -> usize {
    100
}
fn default_api_key_header() -> String {
    "X-Api-Key".into()
}
fn default_in_flight() -> usize {
    4
}
fn default_timeout() -> u64 {
    30
}
fn default_attempts() -> u32 {
    3
}

impl RegistryEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            params: ParamMapping::default(),
            static_params: BTreeMap::from([
                ("format".to_string(), "json".to_string()),
                (
                    "filter.advanced".to_string(),
                    "AREA[StudyType]INTERVENTIONAL".to_string(),
                ),
            ]),
            page_size: default_page_size(),
            api_key_env: None,
            api_key_header: default_api_key_header(),
            cache_dir: None,
            max_in_flight: default_in_flight(),
            timeout_secs: default_timeout(),
            max_attempts: default_attempts(),
        }
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| IngestError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub enum TrialSource {
    Fixture(PathBuf),
    Registry(Box<RegistryEndpoint>),
}

/// Loads patient profiles from a line-delimited file.
pub fn load_profiles(path: &Path) -> Result<Vec<PatientProfile>, IngestError> {
    let lines = jsonl_lines(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(lines.len());
    for (line, text) in lines {
        let profile: PatientProfile = serde_json::from_str(&text).map_err(|e| IngestError::Schema {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        profile.validate().map_err(|e| IngestError::Schema {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        if !seen.insert(profile.profile_id.clone()) {
            return Err(IngestError::DuplicateProfile {
                path: path.to_path_buf(),
                line,
                id: profile.profile_id,
            });
        }
        out.push(profile);
    }
    Ok(out)
}

/// Loads every well-formed trial of a fixture file. Malformed lines are
/// reported, never fatal.
pub fn load_trials(path: &Path) -> Result<(Vec<TrialRecord>, IngestReport), IngestError> {
    let lines = jsonl_lines(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut report = IngestReport::default();
    let mut trials = Vec::with_capacity(lines.len());
    for (line, text) in lines {
        let parsed = serde_json::from_str::<TrialRecord>(&text)
            .map_err(|e| e.to_string())
            .and_then(|t| t.validate().map(|_| t).map_err(|e| e.to_string()));
        match parsed {
            Ok(t) => trials.push(t),
            Err(reason) => {
                let source_id = serde_json::from_str::<Value>(&text)
                    .ok()
                    .and_then(|v| v.get("trial_id").and_then(Value::as_str).map(String::from))
                    .unwrap_or_else(|| format!("{}:{line}", path.display()));
                report.failures.push(IngestFailure { source_id, reason });
            }
        }
    }
    report.fetched = trials.len();
    report.prefilter_passed = trials.len();
    Ok((trials, report))
}

pub fn write_trials(path: &Path, trials: &[TrialRecord]) -> Result<(), IngestError> {
    write_jsonl_atomic(path, trials).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Applies the query's condition and demographics, removes duplicate ids
/// and sorts by trial_id.
pub fn select_trials(query: &RegistryQuery, trials: Vec<TrialRecord>, report: &mut IngestReport) -> Vec<TrialRecord> {
    let demographics = query.demographics();
    let wildcard = query.condition.trim() == "*";
    let mut selected: Vec<TrialRecord> = trials
        .into_iter()
        .filter(|t| {
            wildcard
                || t.condition_codes
                    .iter()
                    .any(|c| c.eq_ignore_ascii_case(query.condition.trim()))
        })
        .collect();
    report.fetched = selected.len();
    selected.retain(|t| demographics.matches(t));
    report.prefilter_passed = selected.len();
    selected.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    let before = selected.len();
    selected.dedup_by(|a, b| a.trial_id == b.trial_id);
    report.deduplicated = before - selected.len();
    selected.truncate(query.max_results);
    selected
}

pub fn fetch_trials(query: &RegistryQuery, source: &TrialSource) -> Result<(Vec<TrialRecord>, IngestReport), IngestError> {
    query.validate()?;
    match source {
        TrialSource::Fixture(path) => {
            let (trials, mut report) = load_trials(path)?;
            let selected = select_trials(query, trials, &mut report);
            Ok((selected, report))
        }
        TrialSource::Registry(endpoint) => {
            let (trials, mut report) = fetch_registry_cached(query, endpoint)?;
            let selected = select_trials(query, trials, &mut report);
            Ok((selected, report))
        }
    }
}

/// Runs independent queries with at most `max_in_flight` at a time. Output
/// order follows the input order.
pub fn fetch_many(
    queries: &[RegistryQuery],
    source: &TrialSource,
    max_in_flight: usize,
) -> Vec<Result<(Vec<TrialRecord>, IngestReport), IngestError>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| queries.par_iter().map(|q| fetch_trials(q, source)).collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct CachedFetch {
    failures: Vec<IngestFailure>,
    warnings: Vec<String>,
}

fn fetch_registry_cached(
    query: &RegistryQuery,
    endpoint: &RegistryEndpoint,
) -> Result<(Vec<TrialRecord>, IngestReport), IngestError> {
    let cache_paths = endpoint.cache_dir.as_ref().map(|dir| {
        let key = query.cache_key(endpoint);
        (dir.join(format!("{key}.jsonl")), dir.join(format!("{key}.report.json")))
    });
    if let Some((records, meta)) = &cache_paths {
        if records.exists() && meta.exists() {
            debug!(path = %records.display(), "registry cache hit");
            let (trials, _) = load_trials(records)?;
            let text = fs::read_to_string(meta).map_err(|source| IngestError::Io {
                path: meta.clone(),
                source,
            })?;
            let cached: CachedFetch = serde_json::from_str(&text).map_err(|e| IngestError::Schema {
                path: meta.clone(),
                line: 1,
                message: e.to_string(),
            })?;
            let report = IngestReport {
                failures: cached.failures,
                warnings: cached.warnings,
                ..IngestReport::default()
            };
            return Ok((trials, report));
        }
    }
    let (trials, report) = fetch_registry(query, endpoint)?;
    if let Some((records, meta)) = &cache_paths {
        write_trials(records, &trials)?;
        let cached = CachedFetch {
            failures: report.failures.clone(),
            warnings: report.warnings.clone(),
        };
        write_json_atomic(meta, &cached).map_err(|source| IngestError::Io {
            path: meta.clone(),
            source,
        })?;
    }
    Ok((trials, report))
}

fn fetch_registry(query: &RegistryQuery, endpoint: &RegistryEndpoint) -> Result<(Vec<TrialRecord>, IngestReport), IngestError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(endpoint.timeout_secs))
        .build()
        .map_err(|e| IngestError::Config(e.to_string()))?;
    let api_key = endpoint
        .api_key_env
        .as_ref()
        .and_then(|var| std::env::var(var).ok());

    let mut report = IngestReport::default();
    let mut trials = Vec::new();
    let mut page_token: Option<String> = None;
    // Cursor pagination: each page needs the previous page's token.
    loop {
        let mut params: Vec<(String, String)> = endpoint
            .static_params
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        params.push((endpoint.params.condition.clone(), query.condition.clone()));
        if let (Some(name), Some(country)) = (&endpoint.params.country, &query.country) {
            params.push((name.clone(), country_name(country).unwrap_or(country).to_string()));
        }
        params.push((endpoint.params.page_size.clone(), endpoint.page_size.to_string()));
        if let Some(token) = &page_token {
            params.push((endpoint.params.page_token.clone(), token.clone()));
        }
        let page = get_page(&client, endpoint, &params, api_key.as_deref())?;
        let studies = page
            .get("studies")
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default();
        for (i, study) in studies.iter().enumerate() {
            match study_to_trial(study, &mut report.warnings) {
                Ok(t) => trials.push(t),
                Err(reason) => report.failures.push(IngestFailure {
                    source_id: study_id(study).unwrap_or_else(|| format!("page-item-{i}")),
                    reason,
                }),
            }
        }
        page_token = page
            .get("nextPageToken")
            .and_then(Value::as_str)
            .map(String::from);
        if page_token.is_none() || trials.len() >= query.max_results || studies.is_empty() {
            break;
        }
    }
    Ok((trials, report))
}

fn get_page(
    client: &reqwest::blocking::Client,
    endpoint: &RegistryEndpoint,
    params: &[(String, String)],
    api_key: Option<&str>,
) -> Result<Value, IngestError> {
    let attempts = endpoint.max_attempts.max(1);
    let mut last = String::new();
    for attempt in 1..=attempts {
        let mut req = client.get(&endpoint.base_url).query(params);
        if let Some(key) = api_key {
            req = req.header(endpoint.api_key_header.as_str(), key);
        }
        match req.send() {
            Ok(resp) if resp.status().is_success() => {
                return resp.json::<Value>().map_err(|e| IngestError::Transport {
                    source_name: endpoint.base_url.clone(),
                    message: format!("invalid JSON: {e}"),
                });
            }
            Ok(resp) if resp.status().is_server_error() || resp.status().as_u16() == 429 => {
                last = format!("HTTP {}", resp.status());
            }
            Ok(resp) => {
                return Err(IngestError::Transport {
                    source_name: endpoint.base_url.clone(),
                    message: format!("HTTP {}", resp.status()),
                });
            }
            Err(e) => last = e.to_string(),
        }
        warn!(attempt, error = %last, "registry request failed");
        if attempt < attempts {
            std::thread::sleep(Duration::from_millis(200 * (1 << (attempt - 1))));
        }
    }
    Err(IngestError::Transport {
        source_name: endpoint.base_url.clone(),
        message: last,
    })
}

fn study_id(study: &Value) -> Option<String> {
    study
        .pointer("/protocolSection/identificationModule/nctId")
        .and_then(Value::as_str)
        .map(String::from)
}

/// Maps one registry study onto a [`TrialRecord`]. The eligibility text is
/// kept byte-for-byte.
pub fn study_to_trial(study: &Value, warnings: &mut Vec<String>) -> Result<TrialRecord, String> {
    let proto = study.get("protocolSection").ok_or("missing protocolSection")?;
    let trial_id = study_id(study).ok_or("missing nctId")?;
    let title = proto
        .pointer("/identificationModule/briefTitle")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let elig = proto.get("eligibilityModule").ok_or("missing eligibilityModule")?;
    let eligibility_text = elig
        .get("eligibilityCriteria")
        .and_then(Value::as_str)
        .filter(|s| !s.trim().is_empty())
        .ok_or("missing eligibility_text")?
        .to_string();
    let min_age = parse_age(elig.get("minimumAge").and_then(Value::as_str), &trial_id, warnings)?;
    let max_age = parse_age(elig.get("maximumAge").and_then(Value::as_str), &trial_id, warnings)?;
    let accepted_sex = match elig.get("sex").and_then(Value::as_str) {
        Some(s) if s.eq_ignore_ascii_case("female") => AcceptedSex::Female,
        Some(s) if s.eq_ignore_ascii_case("male") => AcceptedSex::Male,
        _ => AcceptedSex::All,
    };
    let mut condition_codes: Vec<String> = proto
        .pointer("/conditionsModule/conditions")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_str).map(String::from).collect())
        .unwrap_or_default();
    if let Some(meshes) = study
        .pointer("/derivedSection/conditionBrowseModule/meshes")
        .and_then(Value::as_array)
    {
        condition_codes.extend(
            meshes
                .iter()
                .filter_map(|m| m.get("id").and_then(Value::as_str))
                .map(String::from),
        );
    }
    let mut countries: Vec<String> = Vec::new();
    if let Some(locations) = proto
        .pointer("/contactsLocationsModule/locations")
        .and_then(Value::as_array)
    {
        for loc in locations {
            let Some(name) = loc.get("country").and_then(Value::as_str) else {
                continue;
            };
            match country_code(name) {
                Some(code) => countries.push(code.to_string()),
                None => warnings.push(format!("{trial_id}: unmapped country `{name}` ignored")),
            }
        }
    }
    countries.sort();
    countries.dedup();
    let status = match proto.pointer("/statusModule/overallStatus").and_then(Value::as_str) {
        Some(s) if s.eq_ignore_ascii_case("recruiting") => TrialStatus::Recruiting,
        _ => TrialStatus::Other,
    };
    let trial = TrialRecord {
        trial_id,
        title,
        condition_codes,
        eligibility_text,
        min_age,
        max_age,
        accepted_sex,
        countries,
        status,
    };
    trial.validate().map_err(|e| e.to_string())?;
    Ok(trial)
}

/// Normalizes registry ages ("18 Years", "6 Months") to whole years.
pub fn parse_age(raw: Option<&str>, trial_id: &str, warnings: &mut Vec<String>) -> Result<Option<u32>, String> {
    let Some(raw) = raw.map(str::trim).filter(|s| !s.is_empty()) else {
        return Ok(None);
    };
    if raw.eq_ignore_ascii_case("n/a") {
        return Ok(None);
    }
    let mut parts = raw.split_whitespace();
    let value: u32 = parts
        .next()
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| format!("unparseable age `{raw}`"))?;
    let unit = parts.next().unwrap_or("years").to_ascii_lowercase();
    let years = if unit.starts_with("year") {
        value
    } else if unit.starts_with("month") || unit.starts_with("week") || unit.starts_with("day") {
        let years = if unit.starts_with("month") { value / 12 } else { 0 };
        warnings.push(format!("{trial_id}: age `{raw}` rounded down to {years} years"));
        years
    } else {
        return Err(format!("unparseable age unit in `{raw}`"));
    };
    Ok(Some(years))
}

const COUNTRIES: &[(&str, &str)] = &[
    ("AR", "Argentina"),
    ("AT", "Austria"),
    ("AU", "Australia"),
    ("BE", "Belgium"),
    ("BG", "Bulgaria"),
    ("BR", "Brazil"),
    ("CA", "Canada"),
    ("CH", "Switzerland"),
    ("CL", "Chile"),
    ("CN", "China"),
    ("CO", "Colombia"),
    ("CZ", "Czechia"),
    ("CZ", "Czech Republic"),
    ("DE", "Germany"),
    ("DK", "Denmark"),
    ("EE", "Estonia"),
    ("EG", "Egypt"),
    ("ES", "Spain"),
    ("FI", "Finland"),
    ("FR", "France"),
    ("GB", "United Kingdom"),
    ("GR", "Greece"),
    ("HK", "Hong Kong"),
    ("HR", "Croatia"),
    ("HU", "Hungary"),
    ("IE", "Ireland"),
    ("IL", "Israel"),
    ("IN", "India"),
    ("IT", "Italy"),
    ("JP", "Japan"),
    ("KR", "Korea, Republic of"),
    ("KR", "South Korea"),
    ("LT", "Lithuania"),
    ("LV", "Latvia"),
    ("MX", "Mexico"),
    ("MY", "Malaysia"),
    ("NL", "Netherlands"),
    ("NO", "Norway"),
    ("NZ", "New Zealand"),
    ("PE", "Peru"),
    ("PH", "Philippines"),
    ("PL", "Poland"),
    ("PT", "Portugal"),
    ("RO", "Romania"),
    ("RS", "Serbia"),
    ("RU", "Russian Federation"),
    ("SA", "Saudi Arabia"),
    ("SE", "Sweden"),
    ("SG", "Singapore"),
    ("SK", "Slovakia"),
    ("SI", "Slovenia"),
    ("TH", "Thailand"),
    ("TR", "Turkey"),
    ("TR", "Türkiye"),
    ("TW", "Taiwan"),
    ("UA", "Ukraine"),
    ("US", "United States"),
    ("VN", "Vietnam"),
    ("ZA", "South Africa"),
];

pub fn country_code(name: &str) -> Option<&'static str> {
    let name = name.trim();
    COUNTRIES
        .iter()
        .find(|(code, full)| full.eq_ignore_ascii_case(name) || code.eq_ignore_ascii_case(name))
        .map(|(code, _)| *code)
}

pub fn country_name(code: &str) -> Option<&'static str> {
    COUNTRIES
        .iter()
        .find(|(c, _)| c.eq_ignore_ascii_case(code.trim()))
        .map(|(_, name)| *name)
}
