use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use trialscreen_core::criteria::{CriteriaParser, ParserRules};
use trialscreen_core::engine::{
    apply_decisions, build_review_queue, screen, EngineConfig, ReviewDecision, RunState, ScreeningRun,
};
use trialscreen_core::evaluation::{evaluate, oracle_decisions, render_report, render_stochasticity, stochasticity, GoldSet};
use trialscreen_core::export::{read_run_export, write_run_export, RUN_FILE};
use trialscreen_core::gateway::{
    load_completions, ApiStyle, BackendSpec, CompletionBackend, MockBackend, MockScript, ModelParams, RecordingBackend,
    RemoteConfig, ReplayBackend,
};
use trialscreen_core::io::{write_atomic, write_json_atomic, write_jsonl_atomic};
use trialscreen_core::registry::{
    fetch_many, load_profiles, load_trials, write_trials, IngestReport, RegistryEndpoint, RegistryQuery, TrialSource,
};
use trialscreen_core::{PatientProfile, TrialRecord};

use crate::args::{
    ApiStyleChoice, BackendArgs, BackendChoice, Cli, Command, EvaluateArgs, IngestArgs, ModelArgs, ParseArgs, QueueArgs,
    ScreenArgs, StochasticityArgs,
};
use crate::settings::{self, Defaults};
use crate::CliError;

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let name = match &cli.command {
        Command::Ingest(_) => "ingest",
        Command::Parse(_) => "parse",
        Command::Screen(_) => "screen",
        Command::Queue(_) => "queue",
        Command::Evaluate(_) => "evaluate",
        Command::Stochasticity(_) => "stochasticity",
        Command::Serve => return serve(cli.config.as_deref()),
    };
    let defaults = match &cli.config {
        Some(path) => settings::load(path, name)?,
        None => Defaults::default(),
    };
    match cli.command {
        Command::Ingest(a) => ingest(a, defaults),
        Command::Parse(a) => parse(a, defaults),
        Command::Screen(a) => screen_cmd(a, defaults),
        Command::Queue(a) => queue(a, defaults),
        Command::Evaluate(a) => evaluate_cmd(a, defaults),
        Command::Stochasticity(a) => stochasticity_cmd(a, defaults),
        Command::Serve => unreachable!("handled above"),
    }
}

// ---- validation helpers ----

fn input_file(flag: Option<PathBuf>, default: Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    let path = flag
        .or(default)
        .ok_or_else(|| CliError::usage(format!("--{name} is required")))?;
    if !path.is_file() {
        return Err(CliError::usage(format!("--{name}: {} is not a readable file", path.display())));
    }
    Ok(path)
}

fn input_path(path: &Path, name: &str) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::usage(format!("--{name}: {} does not exist", path.display())));
    }
    Ok(())
}

fn output_dir(flag: Option<PathBuf>, default: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = flag
        .or(default)
        .ok_or_else(|| CliError::usage("--out is required"))?;
    if dir.exists() && !dir.is_dir() {
        return Err(CliError::usage(format!("--out: {} is not a directory", dir.display())));
    }
    fs::create_dir_all(&dir).map_err(|e| CliError::usage(format!("--out: {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_json_atomic(path, value).map_err(|e| CliError::failed(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes()).map_err(|e| CliError::failed(format!("{}: {e}", path.display())))
}

fn read_profiles(path: &Path, ids: &[String]) -> Result<Vec<PatientProfile>, CliError> {
    let profiles = load_profiles(path).map_err(|e| CliError::usage(e.to_string()))?;
    if ids.is_empty() {
        return Ok(profiles);
    }
    let known: BTreeSet<&str> = profiles.iter().map(|p| p.profile_id.as_str()).collect();
    if let Some(missing) = ids.iter().find(|id| !known.contains(id.as_str())) {
        return Err(CliError::usage(format!("--profile {missing}: not in {}", path.display())));
    }
    Ok(profiles.into_iter().filter(|p| ids.contains(&p.profile_id)).collect())
}

fn read_trials(path: &Path) -> Result<Vec<TrialRecord>, CliError> {
    let (trials, report) = load_trials(path).map_err(|e| CliError::usage(e.to_string()))?;
    for f in &report.failures {
        eprintln!("warning: skipped trial {}: {}", f.source_id, f.reason);
    }
    Ok(trials)
}

fn read_gold(path: &Path) -> Result<GoldSet, CliError> {
    GoldSet::load(path).map_err(|e| CliError::usage(format!("--gold: {e}")))
}

fn parser_from(flag: Option<PathBuf>, default: Option<PathBuf>) -> Result<CriteriaParser, CliError> {
    match flag.or(default) {
        None => Ok(CriteriaParser::default()),
        Some(path) => {
            let text = fs::read_to_string(&path)
                .map_err(|e| CliError::usage(format!("--parser-rules: {}: {e}", path.display())))?;
            let rules =
                ParserRules::from_toml(&text).map_err(|e| CliError::usage(format!("--parser-rules: {e}")))?;
            Ok(CriteriaParser::new(rules))
        }
    }
}

/// Run exports are directories holding a run.json. `dir` is either one of
/// them or a directory whose immediate children are.
fn discover_runs(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if dir.join(RUN_FILE).is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let entries = fs::read_dir(dir).map_err(|e| CliError::usage(format!("--input: {}: {e}", dir.display())))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.join(RUN_FILE).is_file())
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(CliError::usage(format!("--input: no run exports under {}", dir.display())));
    }
    Ok(found)
}

// ---- backend and model settings ----

enum Backend {
    /// Rebuilt per repetition so each run draws different noise.
    Mock(MockScript),
    Shared(Arc<dyn CompletionBackend>),
}

impl Backend {
    fn instance(&self, seed_offset: u64) -> Arc<dyn CompletionBackend> {
        match self {
            Backend::Mock(script) => Arc::new(MockBackend::new(script.clone()).with_seed_offset(seed_offset)),
            Backend::Shared(b) => b.clone(),
        }
    }
}

fn backend_spec(args: &BackendArgs, default: Option<BackendSpec>) -> Result<BackendSpec, CliError> {
    let Some(choice) = args.backend else {
        return default.ok_or_else(|| CliError::usage("--backend is required (or set [backend] in the config)"));
    };
    Ok(match choice {
        BackendChoice::Mock => {
            let fallback = match default {
                Some(BackendSpec::Mock { rules, .. }) => Some(rules),
                _ => None,
            };
            let rules = args
                .rules
                .clone()
                .or(fallback)
                .ok_or_else(|| CliError::usage("--backend mock needs --rules"))?;
            BackendSpec::Mock { rules, seed_offset: 0 }
        }
        BackendChoice::Replay => {
            let fallback = match default {
                Some(BackendSpec::Replay { log }) => Some(log),
                _ => None,
            };
            let log = args
                .replay_log
                .clone()
                .or(fallback)
                .ok_or_else(|| CliError::usage("--backend replay needs --replay-log"))?;
            BackendSpec::Replay { log }
        }
        BackendChoice::Remote => {
            let mut config = match default {
                Some(BackendSpec::Remote(c)) => c,
                _ => {
                    let url = args
                        .remote_url
                        .clone()
                        .ok_or_else(|| CliError::usage("--backend remote needs --remote-url"))?;
                    serde_json::from_value::<RemoteConfig>(serde_json::json!({ "url": url }))
                        .map_err(|e| CliError::usage(e.to_string()))?
                }
            };
            if let Some(url) = &args.remote_url {
                config.url = url.clone();
            }
            if let Some(style) = args.api_style {
                config.api_style = match style {
                    ApiStyleChoice::Completions => ApiStyle::Completions,
                    ApiStyleChoice::Chat => ApiStyle::Chat,
                };
            }
            if let Some(env) = &args.api_key_env {
                config.api_key_env = Some(env.clone());
            }
            BackendSpec::Remote(config)
        }
    })
}

fn build_backend(spec: &BackendSpec) -> Result<Backend, CliError> {
    match spec {
        BackendSpec::Mock { rules, .. } => {
            if !rules.is_file() {
                return Err(CliError::usage(format!("--rules: {} is not a readable file", rules.display())));
            }
            let script = MockScript::from_file(rules).map_err(|e| CliError::usage(e.to_string()))?;
            Ok(Backend::Mock(script))
        }
        BackendSpec::Replay { log } if log.is_dir() => {
            let mut records = Vec::new();
            for dir in discover_runs(log)? {
                let path = dir.join(trialscreen_core::export::COMPLETIONS_FILE);
                if path.is_file() {
                    records.extend(load_completions(&path).map_err(|e| CliError::usage(e.to_string()))?);
                }
            }
            Ok(Backend::Shared(Arc::new(ReplayBackend::new(records))))
        }
        BackendSpec::Replay { log } => {
            input_path(log, "replay-log")?;
            let b = ReplayBackend::from_file(log).map_err(|e| CliError::usage(e.to_string()))?;
            Ok(Backend::Shared(Arc::new(b)))
        }
        remote => Ok(Backend::Shared(remote.build().map_err(|e| CliError::usage(e.to_string()))?)),
    }
}

fn model_params(args: &ModelArgs, temperature: f64, defaults: &Defaults) -> Result<ModelParams, CliError> {
    let base = ModelParams::default();
    let params = ModelParams {
        model_name: args.model.clone().or(defaults.model.clone()).unwrap_or(base.model_name),
        temperature,
        max_output_tokens: args
            .max_output_tokens
            .or(defaults.max_output_tokens)
            .unwrap_or(base.max_output_tokens),
    };
    params.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(params)
}

fn engine_config(args: &ModelArgs, defaults: &Defaults) -> Result<EngineConfig, CliError> {
    let max_parallel = args.max_parallel.or(defaults.max_parallel).unwrap_or(4);
    if max_parallel == 0 {
        return Err(CliError::usage("--max-parallel must be at least 1"));
    }
    Ok(EngineConfig {
        max_parallel,
        combined: args.combined || defaults.combined.unwrap_or(false),
        parser: parser_from(args.parser_rules.clone(), defaults.parser_rules.clone())?,
        ..EngineConfig::default()
    })
}

fn trials_for(profile: &PatientProfile, trials: &[TrialRecord], match_condition: bool) -> Vec<TrialRecord> {
    trials
        .iter()
        .filter(|t| !match_condition || t.condition_codes.contains(&profile.condition_code))
        .cloned()
        .collect()
}

fn screen_one(
    profile: &PatientProfile,
    trials: &[TrialRecord],
    params: &ModelParams,
    backend: Arc<dyn CompletionBackend>,
    engine: &EngineConfig,
) -> Result<(ScreeningRun, Vec<trialscreen_core::gateway::CompletionRecord>), CliError> {
    let recorder = RecordingBackend::new(backend);
    let run = screen(profile, trials, params, &recorder, engine)
        .map_err(|e| CliError::failed(format!("screening {}: {e}", profile.profile_id)))?;
    Ok((run, recorder.records()))
}

fn summary_line(run: &ScreeningRun) -> String {
    let (mut eligible, mut ineligible, mut manual) = (0, 0, 0);
    for r in &run.results {
        match r.eligible() {
            Some(true) => eligible += 1,
            Some(false) => ineligible += 1,
            None => manual += 1,
        }
    }
    format!(
        "{} {} trials={} eligible={eligible} ineligible={ineligible} manual={manual} prefiltered={}",
        run.profile_id,
        run.run_id,
        run.results.len(),
        run.prefiltered_out.len()
    )
}

// ---- subcommands ----

#[derive(Debug, Serialize)]
struct ProfileIngest {
    profile_id: String,
    condition: String,
    trial_ids: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<IngestReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn ingest(a: IngestArgs, d: Defaults) -> Result<(), CliError> {
    let profiles_path = input_file(a.profiles, d.profiles.clone(), "profiles")?;
    let source = match (a.trials.or(d.trials.clone()), a.registry.or(d.registry.clone())) {
        (Some(path), _) => {
            input_file(Some(path.clone()), None, "trials")?;
            TrialSource::Fixture(path)
        }
        (None, Some(path)) => {
            input_file(Some(path.clone()), None, "registry")?;
            TrialSource::Registry(Box::new(
                RegistryEndpoint::from_toml_file(&path).map_err(|e| CliError::usage(e.to_string()))?,
            ))
        }
        (None, None) => return Err(CliError::usage("one of --trials or --registry is required")),
    };
    let max_results = a.max_results.or(d.max_results).unwrap_or(500);
    let max_in_flight = a.max_in_flight.or(d.max_in_flight).unwrap_or(4);
    if max_results == 0 || max_in_flight == 0 {
        return Err(CliError::usage("--max-results and --max-in-flight must be at least 1"));
    }
    let out = output_dir(a.out, d.out)?;
    let profiles = read_profiles(&profiles_path, &[])?;

    let queries: Vec<RegistryQuery> = profiles.iter().map(|p| RegistryQuery::for_profile(p, max_results)).collect();
    let results = fetch_many(&queries, &source, max_in_flight);
    let mut all: BTreeMap<String, TrialRecord> = BTreeMap::new();
    let mut entries = Vec::new();
    let mut errors = 0;
    for ((profile, query), result) in profiles.iter().zip(&queries).zip(results) {
        let mut entry = ProfileIngest {
            profile_id: profile.profile_id.clone(),
            condition: query.condition.clone(),
            trial_ids: Vec::new(),
            report: None,
            error: None,
        };
        match result {
            Ok((trials, report)) => {
                entry.trial_ids = trials.iter().map(|t| t.trial_id.clone()).collect();
                entry.report = Some(report);
                for t in trials {
                    all.entry(t.trial_id.clone()).or_insert(t);
                }
            }
            Err(e) => {
                errors += 1;
                eprintln!("error: {}: {e}", profile.profile_id);
                entry.error = Some(e.to_string());
            }
        }
        println!("{} trials={}", entry.profile_id, entry.trial_ids.len());
        entries.push(entry);
    }
    let trials: Vec<TrialRecord> = all.into_values().collect();
    write_trials(&out.join("trials.jsonl"), &trials).map_err(CliError::failed)?;
    write_json(&out.join("ingest_report.json"), &entries)?;
    if errors > 0 {
        return Err(CliError::failed(format!("{errors} of {} queries failed", profiles.len())));
    }
    Ok(())
}

fn parse(a: ParseArgs, d: Defaults) -> Result<(), CliError> {
    let trials_path = input_file(a.trials, d.trials.clone(), "trials")?;
    let parser = parser_from(a.parser_rules, d.parser_rules.clone())?;
    let out = output_dir(a.out, d.out)?;
    let mut trials = read_trials(&trials_path)?;
    trials.sort_by(|x, y| x.trial_id.cmp(&y.trial_id));
    let mut parsed = Vec::new();
    let mut failures = Vec::new();
    for t in &trials {
        match parser.parse_trial(t) {
            Ok(p) => parsed.push(p),
            Err(f) => failures.push(f),
        }
    }
    let path = out.join("criteria.jsonl");
    write_jsonl_atomic(&path, &parsed).map_err(|e| CliError::failed(format!("{}: {e}", path.display())))?;
    let path = out.join("failures.jsonl");
    write_jsonl_atomic(&path, &failures).map_err(|e| CliError::failed(format!("{}: {e}", path.display())))?;
    println!(
        "parsed={} failed={} criteria={}",
        parsed.len(),
        failures.len(),
        parsed.iter().map(|p| p.len()).sum::<usize>()
    );
    Ok(())
}

fn screen_cmd(a: ScreenArgs, d: Defaults) -> Result<(), CliError> {
    let profiles_path = input_file(a.profiles, d.profiles.clone(), "profiles")?;
    let trials_path = input_file(a.trials, d.trials.clone(), "trials")?;
    let spec = backend_spec(&a.backend, d.backend.clone())?;
    let temperature = a.temperature.or(d.temperature).unwrap_or(0.0);
    let params = model_params(&a.model, temperature, &d)?;
    let engine = engine_config(&a.model, &d)?;
    let match_condition = a.model.match_condition || d.match_condition.unwrap_or(false);
    let backend = build_backend(&spec)?;
    let profiles = read_profiles(&profiles_path, &a.profile_ids)?;
    let trials = read_trials(&trials_path)?;
    let out = output_dir(a.out, d.out)?;

    for profile in &profiles {
        let selected = trials_for(profile, &trials, match_condition);
        let (run, completions) = screen_one(profile, &selected, &params, backend.instance(0), &engine)?;
        write_run_export(&out.join(&profile.profile_id), &run, &completions).map_err(CliError::failed)?;
        println!("{}", summary_line(&run));
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct DecisionLine {
    #[serde(default)]
    run_id: Option<String>,
    #[serde(flatten)]
    decision: ReviewDecision,
}

fn read_decision_lines(path: &Path) -> Result<Vec<DecisionLine>, CliError> {
    let lines = trialscreen_core::io::jsonl_lines(path)
        .map_err(|e| CliError::usage(format!("--decisions: {}: {e}", path.display())))?;
    lines
        .into_iter()
        .map(|(n, text)| {
            serde_json::from_str(&text)
                .map_err(|e| CliError::usage(format!("--decisions: {}:{n}: {e}", path.display())))
        })
        .collect()
}

fn queue(a: QueueArgs, d: Defaults) -> Result<(), CliError> {
    let input = a
        .input
        .ok_or_else(|| CliError::usage("--input is required"))?;
    input_path(&input, "input")?;
    let dirs = discover_runs(&input)?;
    let gold = match a.oracle {
        Some(p) => {
            input_file(Some(p.clone()), None, "oracle")?;
            Some(read_gold(&p)?)
        }
        None => None,
    };
    let lines = match &a.decisions {
        Some(p) => {
            input_file(Some(p.clone()), None, "decisions")?;
            read_decision_lines(p)?
        }
        None => Vec::new(),
    };
    let out = match a.out.or(d.out) {
        Some(dir) => Some(output_dir(Some(dir), None)?),
        None => None,
    };

    let mut exports = Vec::new();
    for dir in &dirs {
        let (run, completions) = read_run_export(dir).map_err(|e| CliError::usage(e.to_string()))?;
        exports.push((dir, run, completions));
    }
    let mut by_run: BTreeMap<String, Vec<ReviewDecision>> = BTreeMap::new();
    for line in lines {
        let run_id = match line.run_id {
            Some(id) => id,
            None if exports.len() == 1 => exports[0].1.run_id.clone(),
            None => return Err(CliError::usage("--decisions: lines need a run_id when several runs are given")),
        };
        if !exports.iter().any(|(_, r, _)| r.run_id == run_id) {
            return Err(CliError::usage(format!("--decisions: unknown run {run_id}")));
        }
        by_run.entry(run_id).or_default().push(line.decision);
    }

    for (dir, run, completions) in exports {
        let mut run = if run.state == RunState::Screened {
            build_review_queue(&run).map_err(CliError::failed)?
        } else {
            run
        };
        let batch = match &gold {
            Some(g) => oracle_decisions(&run, g, &a.reviewer).map_err(CliError::failed)?,
            None => by_run.remove(&run.run_id).unwrap_or_default(),
        };
        let finalize = gold.is_some() && run.state == RunState::InReview && run.queue.as_ref().is_some_and(|q| q.pending() == 0);
        if !batch.is_empty() || finalize {
            run = apply_decisions(&run, &batch, run.version)
                .map_err(|e| CliError::failed(format!("{}: {e}", run.run_id)))?;
        }
        let target = match &out {
            Some(o) => o.join(dir.file_name().unwrap_or_default()),
            None => dir.clone(),
        };
        write_run_export(&target, &run, &completions).map_err(CliError::failed)?;
        let q = run.queue.as_ref();
        println!(
            "{} {} queued={} manual={} pending={} state={}",
            run.profile_id,
            run.run_id,
            q.map_or(0, |q| q.items.len()),
            q.map_or(0, |q| q.manual_trials.len()),
            q.map_or(0, |q| q.pending()),
            serde_json::to_value(run.state).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
        );
    }
    Ok(())
}

fn load_runs(inputs: &[PathBuf]) -> Result<Vec<ScreeningRun>, CliError> {
    let mut runs = Vec::new();
    for input in inputs {
        input_path(input, "input")?;
        for dir in discover_runs(input)? {
            let (run, _) = read_run_export(&dir).map_err(|e| CliError::usage(e.to_string()))?;
            runs.push(run);
        }
    }
    Ok(runs)
}

fn evaluate_cmd(a: EvaluateArgs, d: Defaults) -> Result<(), CliError> {
    if a.inputs.is_empty() {
        return Err(CliError::usage("--input is required"));
    }
    let gold_path = input_file(a.gold, d.gold.clone(), "gold")?;
    let out = output_dir(a.out, d.out)?;
    let gold = read_gold(&gold_path)?;
    let runs = load_runs(&a.inputs)?;
    let report = evaluate(&runs, &gold).map_err(CliError::failed)?;
    let text = render_report(&report);
    write_json(&out.join("report.json"), &report)?;
    write_text(&out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn stochasticity_cmd(a: StochasticityArgs, d: Defaults) -> Result<(), CliError> {
    let profiles_path = input_file(a.profiles, d.profiles.clone(), "profiles")?;
    let trials_path = input_file(a.trials, d.trials.clone(), "trials")?;
    let gold_path = input_file(a.gold, d.gold.clone(), "gold")?;
    let spec = backend_spec(&a.backend, d.backend.clone())?;
    let runs = a.runs.or(d.runs).unwrap_or(10);
    if runs == 0 {
        return Err(CliError::usage("--runs must be at least 1"));
    }
    let temperatures = if a.temperatures.is_empty() {
        d.temperatures
            .clone()
            .or(d.temperature.map(|t| vec![t]))
            .unwrap_or_else(|| vec![0.0])
    } else {
        a.temperatures.clone()
    };
    let params: Vec<ModelParams> = temperatures
        .iter()
        .map(|&t| model_params(&a.model, t, &d))
        .collect::<Result<_, _>>()?;
    let engine = engine_config(&a.model, &d)?;
    let match_condition = a.model.match_condition || d.match_condition.unwrap_or(false);
    let backend = build_backend(&spec)?;
    let profiles = read_profiles(&profiles_path, &a.profile_ids)?;
    let trials = read_trials(&trials_path)?;
    let gold = read_gold(&gold_path)?;
    let out = output_dir(a.out, d.out)?;

    let mut all = Vec::new();
    for p in &params {
        for i in 0..runs {
            let instance = backend.instance(i as u64);
            for profile in &profiles {
                let selected = trials_for(profile, &trials, match_condition);
                let (mut run, completions) = screen_one(profile, &selected, p, instance.clone(), &engine)?;
                run.run_id = format!("{}-r{i:02}", run.run_id);
                if a.keep_runs {
                    let dir = out
                        .join("runs")
                        .join(&profile.profile_id)
                        .join(format!("t{:.3}-r{i:02}", p.temperature));
                    write_run_export(&dir, &run, &completions).map_err(CliError::failed)?;
                }
                all.push(run);
            }
        }
    }
    let report = stochasticity(&all, &gold).map_err(CliError::failed)?;
    let text = render_stochasticity(&report);
    write_json(&out.join("stochasticity.json"), &report)?;
    write_text(&out.join("stochasticity.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn serve(config: Option<&Path>) -> Result<(), CliError> {
    let path = config.ok_or_else(|| CliError::usage("serve needs --config with the service configuration"))?;
    input_file(Some(path.to_path_buf()), None, "config")?;
    let config = trialscreen_service::ServiceConfig::from_file(path).map_err(CliError::usage)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::failed)?;
    runtime.block_on(trialscreen_service::serve(config)).map_err(CliError::failed)
}
