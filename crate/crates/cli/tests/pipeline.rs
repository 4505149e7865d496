mod common;

use std::path::Path;

use common::{cli, ok, reviewed_in_process, tree, Workspace};
use trialscreen_core::criteria::{CriteriaParser, ParseFailure, ParsedCriteria};
use trialscreen_core::evaluation::{evaluate, EvaluationReport, StochasticityReport};
use trialscreen_core::export::read_run_export;
use trialscreen_core::gateway::MockBackend;
use trialscreen_core::io::jsonl_lines;
use trialscreen_fixtures::{desk, profiles};

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &str) -> Vec<T> {
    jsonl_lines(Path::new(path))
        .unwrap()
        .into_iter()
        .map(|(_, l)| serde_json::from_str(&l).unwrap())
        .collect()
}

#[test]
fn parse_writes_criteria_and_failures() {
    let ws = Workspace::new();
    ok(&["parse", "--trials", &ws.data("desk_trials.jsonl"), "--out", &ws.path("parsed")]);
    let parsed: Vec<ParsedCriteria> = read_jsonl(&ws.path("parsed/criteria.jsonl"));
    let failures: Vec<ParseFailure> = read_jsonl(&ws.path("parsed/failures.jsonl"));

    let parser = CriteriaParser::default();
    let (mut want_ok, mut want_err) = (Vec::new(), Vec::new());
    for t in desk::trials() {
        match parser.parse_trial(&t) {
            Ok(p) => want_ok.push(p),
            Err(f) => want_err.push(f),
        }
    }
    assert_eq!(parsed, want_ok);
    assert_eq!(failures, want_err);
    assert_eq!(failures.len(), 1);
}

#[test]
fn screen_queue_evaluate_equals_in_process_composition() {
    let ws = Workspace::new();
    let runs_dir = ws.path("runs");
    ok(&[
        "screen",
        "--profiles",
        &ws.data("profiles.jsonl"),
        "--trials",
        &ws.data("desk_trials.jsonl"),
        "--backend",
        "mock",
        "--rules",
        &ws.data("desk_mock.toml"),
        "--out",
        &runs_dir,
    ]);
    ok(&["queue", "--input", &runs_dir, "--oracle", &ws.data("desk_gold.jsonl")]);
    ok(&["evaluate", "--input", &runs_dir, "--gold", &ws.data("desk_gold.jsonl"), "--out", &ws.path("report")]);

    let gold = desk::gold();
    let expected = reviewed_in_process(&profiles(), &desk::trials(), &MockBackend::new(desk::mock_script()), &gold);
    for want in &expected {
        let (got, _) = read_run_export(&Path::new(&runs_dir).join(&want.profile_id)).unwrap();
        assert_eq!(&got, want, "{}", want.profile_id);
    }
    let report: EvaluationReport =
        serde_json::from_str(&std::fs::read_to_string(ws.path("report/report.json")).unwrap()).unwrap();
    assert_eq!(report, evaluate(&expected, &gold).unwrap());
    assert!(std::fs::read_to_string(ws.path("report/report.txt")).unwrap().contains("Workload"));
}

#[test]
fn decisions_file_is_applied_to_the_named_run() {
    let ws = Workspace::new();
    let runs_dir = ws.path("runs");
    ok(&[
        "screen",
        "--profiles",
        &ws.data("profiles.jsonl"),
        "--profile",
        "FP006",
        "--trials",
        &ws.data("desk_trials.jsonl"),
        "--backend",
        "mock",
        "--rules",
        &ws.data("desk_mock.toml"),
        "--out",
        &runs_dir,
    ]);
    ok(&["queue", "--input", &runs_dir]);
    let (run, _) = read_run_export(&Path::new(&runs_dir).join("FP006")).unwrap();
    let item = &run.queue.as_ref().unwrap().items[0];
    let line = serde_json::json!({
        "run_id": run.run_id,
        "target": {"criterion": item.criterion.key},
        "action": "reject_dropout",
        "reviewer_id": "dr-a",
        "timestamp": "2024-01-01T00:00:00Z",
    });
    let decisions = ws.path("decisions.jsonl");
    std::fs::write(&decisions, format!("{line}\n")).unwrap();
    ok(&["queue", "--input", &runs_dir, "--decisions", &decisions]);
    let (after, _) = read_run_export(&Path::new(&runs_dir).join("FP006")).unwrap();
    assert_eq!(after.decisions.len(), 1);
    assert_eq!(after.version, run.version + 1);

    // Stale or repeated decisions fail without touching the export.
    let before = tree(Path::new(&runs_dir));
    assert_eq!(cli(&["queue", "--input", &runs_dir, "--decisions", &decisions]), 1);
    assert_eq!(tree(Path::new(&runs_dir)), before);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let ws = Workspace::new();
    let config = ws.path("trialscreen.toml");
    std::fs::write(
        &config,
        "profiles = \"data/profiles.jsonl\"\ntrials = \"data/desk_trials.jsonl\"\nmax_parallel = 2\n\
         [backend]\nkind = \"mock\"\nrules = \"data/desk_mock.toml\"\n[screen]\nout = \"from-config\"\n",
    )
    .unwrap();
    ok(&["--config", &config, "screen", "--profile", "FP001"]);
    assert!(Path::new(&ws.path("from-config/FP001/run.json")).is_file());
    ok(&["--config", &config, "screen", "--profile", "FP001", "--out", &ws.path("from-flag")]);
    assert_eq!(tree(Path::new(&ws.path("from-config"))), tree(Path::new(&ws.path("from-flag"))));
    // A flag of another kind replaces the configured backend.
    assert_eq!(
        cli(&["--config", &config, "screen", "--backend", "replay", "--replay-log", &ws.path("none.jsonl")]),
        2
    );
}

#[test]
fn stochasticity_writes_one_point_per_run() {
    let ws = Workspace::new();
    ok(&[
        "stochasticity",
        "--profiles",
        &ws.data("profiles.jsonl"),
        "--profile",
        "FP002",
        "--profile",
        "FP004",
        "--trials",
        &ws.data("desk_trials.jsonl"),
        "--gold",
        &ws.data("desk_gold.jsonl"),
        "--backend",
        "mock",
        "--rules",
        &ws.data("desk_noise.toml"),
        "--runs",
        "10",
        "--temperature",
        "0",
        "--temperature",
        "1",
        "--keep-runs",
        "--out",
        &ws.path("stoch"),
    ]);
    let report: StochasticityReport =
        serde_json::from_str(&std::fs::read_to_string(ws.path("stoch/stochasticity.json")).unwrap()).unwrap();
    assert_eq!(report.groups.len(), 4);
    for g in &report.groups {
        assert_eq!(g.points.len(), 10, "{} at {}", g.profile_id, g.temperature);
    }
    let kept = std::fs::read_dir(ws.path("stoch/runs/FP004")).unwrap().count();
    assert_eq!(kept, 20);
    assert!(Path::new(&ws.path("stoch/stochasticity.txt")).is_file());
}

#[test]
fn ingest_selects_trials_per_profile() {
    let ws = Workspace::new();
    ok(&[
        "ingest",
        "--profiles",
        &ws.data("profiles.jsonl"),
        "--trials",
        &ws.data("cohort_trials.jsonl"),
        "--out",
        &ws.path("ingested"),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.path("ingested/ingest_report.json")).unwrap()).unwrap();
    let entries = report.as_array().unwrap();
    assert_eq!(entries.len(), 10);
    let fp004 = entries.iter().find(|e| e["profile_id"] == "FP004").unwrap();
    assert_eq!(fp004["trial_ids"].as_array().unwrap().len(), 34);
    let trials: Vec<trialscreen_core::TrialRecord> = read_jsonl(&ws.path("ingested/trials.jsonl"));
    let mut ids: Vec<&str> = trials.iter().map(|t| t.trial_id.as_str()).collect();
    let n = ids.len();
    ids.dedup();
    assert_eq!(ids.len(), n);
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn exit_codes() {
    let ws = Workspace::new();
    let bin = env!("CARGO_BIN_EXE_trialscreen");
    let status = |args: &[&str]| std::process::Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(status(&["--help"]), Some(0));
    assert_eq!(status(&["screen", "--bogus"]), Some(2));
    assert_eq!(status(&["parse", "--trials", &ws.path("missing.jsonl"), "--out", &ws.path("o")]), Some(2));
    let screen = |extra: &[&str]| {
        let mut args = vec![
            "screen",
            "--profiles",
            &ws.data("profiles.jsonl"),
            "--trials",
            &ws.data("desk_trials.jsonl"),
            "--out",
            &ws.path("o"),
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
        args.extend(extra.iter().map(|s| s.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        status(&refs)
    };
    assert_eq!(screen(&[]), Some(2), "no backend");
    assert_eq!(screen(&["--backend", "mock"]), Some(2), "mock without rules");
    let rules = ws.data("desk_mock.toml");
    assert_eq!(screen(&["--backend", "mock", "--rules", &rules, "--temperature", "3"]), Some(2));
    assert_eq!(screen(&["--backend", "mock", "--rules", &rules, "--profile", "FP999"]), Some(2));
    assert_eq!(screen(&["--backend", "mock", "--rules", &rules, "--profile", "FP001"]), Some(0));
    // Nothing was written before the usage errors above were detected.
    assert_eq!(std::fs::read_dir(ws.path("o")).unwrap().count(), 1);
    assert_eq!(status(&["evaluate", "--input", &ws.path("o"), "--gold", &ws.path("nope")]), Some(2));
    assert_eq!(status(&["serve"]), Some(2));
}
