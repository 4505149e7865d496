//! HTTP JSON API.
//!
//! | method | path                     | body / query                       |
//! |--------|--------------------------|------------------------------------|
//! | GET    | /health                  |                                    |
//! | GET    | /runs                    |                                    |
//! | POST   | /runs                    | `CreateRunRequest`, `Idempotency-Key` header |
//! | GET    | /runs/{id}               |                                    |
//! | GET    | /runs/{id}/queue         |                                    |
//! | POST   | /runs/{id}/decisions     | `{expected_etag, decisions}` or `If-Match` |
//! | GET    | /runs/{id}/verdicts      |                                    |
//! | GET    | /runs/{id}/report        | `?gold=<gold set>`                 |
//!
//! Errors are `{"code": ..., "message": ...}` with codes `not_found`,
//! `invalid_request`, `run_pending`, `run_failed`, `wrong_state`,
//! `etag_conflict`, `invalid_decision` and `internal`.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;
use trialscreen_core::engine::{
    build_review_queue, derive_run_id, screen, workload_stats, DecisionAction, DecisionTarget, EngineConfig,
    ManualResolution, ReviewDecision, ScreeningRun,
};
use trialscreen_core::evaluation::evaluate;
use trialscreen_core::gateway::{CompletionBackend, RecordingBackend};
use trialscreen_core::{CriterionKey, EligibilityLabel, EngineError, TrialRecord, TrialVerdict};

use crate::config::{Catalog, ServiceConfig};
use crate::store::{CreateRunRequest, RunEntry, RunStatus, Store, StoreError};

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub catalog: Arc<Catalog>,
    pub backend: Arc<dyn CompletionBackend>,
    pub engine: Arc<EngineConfig>,
    jobs: Arc<Semaphore>,
}

impl AppState {
    pub fn new(
        store: Store,
        catalog: Catalog,
        backend: Arc<dyn CompletionBackend>,
        engine: EngineConfig,
        max_jobs: usize,
    ) -> Self {
        Self {
            store: Arc::new(store),
            catalog: Arc::new(catalog),
            backend,
            engine: Arc::new(engine),
            jobs: Arc::new(Semaphore::new(max_jobs.max(1))),
        }
    }

    /// Restarts screening for runs that were registered but never finished.
    pub fn resume_pending(&self) {
        for (run_id, request) in self.store.pending() {
            tracing::info!(%run_id, "resuming screening job");
            spawn_job(self.clone(), run_id, request);
        }
    }

    fn resolve(&self, request: &CreateRunRequest) -> Result<(trialscreen_core::PatientProfile, Vec<TrialRecord>), ApiError> {
        let profile = self
            .catalog
            .profiles
            .get(&request.profile_id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("profile {}", request.profile_id)))?;
        let trials = self
            .catalog
            .trial_sets
            .get(&request.trial_set)
            .ok_or_else(|| ApiError::not_found(format!("trial set {}", request.trial_set)))?;
        let trials = trials
            .iter()
            .filter(|t| !request.match_condition || t.condition_codes.contains(&profile.condition_code))
            .cloned()
            .collect();
        Ok((profile, trials))
    }

    fn engine_for(&self, request: &CreateRunRequest) -> EngineConfig {
        EngineConfig {
            combined: request.combined,
            ..(*self.engine).clone()
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    extra: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            extra: None,
        }
    }

    fn not_found(what: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::NotFound(id) => Self::not_found(format!("run {id}")),
            StoreError::Pending(_) => Self::new(StatusCode::CONFLICT, "run_pending", message),
            StoreError::Failed { .. } => Self::new(StatusCode::CONFLICT, "run_failed", message),
            StoreError::Conflict { current, .. } => Self {
                extra: Some(json!({ "current_etag": current })),
                ..Self::new(StatusCode::CONFLICT, "etag_conflict", message)
            },
            StoreError::Engine(EngineError::State { .. }) => Self::new(StatusCode::CONFLICT, "wrong_state", message),
            StoreError::Engine(EngineError::Conflict { .. }) => Self::new(StatusCode::CONFLICT, "etag_conflict", message),
            StoreError::Engine(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_decision", message),
            StoreError::Io { .. } | StoreError::Corrupt { .. } => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "code": self.code, "message": self.message });
        if let (Some(Value::Object(extra)), Value::Object(map)) = (self.extra, &mut body) {
            map.extend(extra);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/runs", get(list_runs).post(create_run))
        .route("/runs/:id", get(get_run))
        .route("/runs/:id/queue", get(get_queue))
        .route("/runs/:id/decisions", post(post_decisions))
        .route("/runs/:id/verdicts", get(get_verdicts))
        .route("/runs/:id/report", get(get_report))
        .with_state(state)
}

fn links(run_id: &str) -> Value {
    let base = format!("/runs/{run_id}");
    json!({
        "self": base,
        "queue": format!("{base}/queue"),
        "decisions": format!("{base}/decisions"),
        "verdicts": format!("{base}/verdicts"),
        "report": format!("{base}/report"),
    })
}

#[derive(Debug, Serialize)]
struct RunEnvelope {
    run_id: String,
    status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    etag: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    run: Option<ScreeningRun>,
    links: Value,
}

impl RunEnvelope {
    fn of(entry: RunEntry) -> Self {
        Self {
            etag: entry.run.as_ref().map(ScreeningRun::etag),
            links: links(&entry.run_id),
            run_id: entry.run_id,
            status: entry.status,
            error: entry.error,
            run: entry.run,
        }
    }

    fn into_response(self, status: StatusCode) -> Response {
        let etag = self.etag.clone();
        let mut resp = (status, Json(self)).into_response();
        if let Some(v) = etag.and_then(|e| HeaderValue::from_str(&e).ok()) {
            resp.headers_mut().insert(header::ETAG, v);
        }
        resp
    }
}

async fn list_runs(State(state): State<AppState>) -> Json<Value> {
    let runs: Vec<Value> = state
        .store
        .list()
        .into_iter()
        .map(|e| {
            json!({
                "run_id": e.run_id,
                "profile_id": e.request.profile_id,
                "trial_set": e.request.trial_set,
                "status": e.status,
                "state": e.run.as_ref().map(|r| r.state),
                "version": e.run.as_ref().map(|r| r.version),
                "links": links(&e.run_id),
            })
        })
        .collect();
    Json(json!({ "runs": runs }))
}

async fn create_run(State(state): State<AppState>, headers: HeaderMap, Json(request): Json<CreateRunRequest>) -> ApiResult<Response> {
    let (profile, trials) = state.resolve(&request)?;
    request
        .params
        .validate()
        .map_err(|e| ApiError::invalid(e.to_string()))?;
    let key = headers
        .get("idempotency-key")
        .map(|v| v.to_str().map_err(|_| ApiError::invalid("Idempotency-Key must be ASCII")))
        .transpose()?;
    let run_id = derive_run_id(&profile, &trials, &request.params, &state.engine_for(&request));
    let (run_id, created) = state.store.create(&run_id, &request, key)?;
    if created {
        spawn_job(state.clone(), run_id.clone(), request);
    }
    let entry = state.store.get(&run_id)?;
    let status = if created { StatusCode::ACCEPTED } else { StatusCode::OK };
    Ok(RunEnvelope::of(entry).into_response(status))
}

fn spawn_job(state: AppState, run_id: String, request: CreateRunRequest) {
    tokio::spawn(async move {
        let Ok(_permit) = state.jobs.clone().acquire_owned().await else {
            return;
        };
        let job_state = state.clone();
        let job_id = run_id.clone();
        let outcome = tokio::task::spawn_blocking(move || run_job(&job_state, &job_id, &request)).await;
        let recorded = match outcome {
            Ok(Ok(run)) => state.store.record_screened(&run_id, run),
            Ok(Err(message)) => state.store.record_failed(&run_id, &message),
            Err(join) => state.store.record_failed(&run_id, &format!("screening job panicked: {join}")),
        };
        if let Err(e) = recorded {
            tracing::error!(%run_id, error = %e, "could not record job outcome");
        }
    });
}

fn run_job(state: &AppState, run_id: &str, request: &CreateRunRequest) -> Result<ScreeningRun, String> {
    let (profile, trials) = state.resolve(request).map_err(|e| e.message)?;
    let backend = RecordingBackend::new(state.backend.clone()).with_log(state.store.run_dir(run_id).join("completions.jsonl"));
    let run = screen(&profile, &trials, &request.params, &backend, &state.engine_for(request)).map_err(|e| e.to_string())?;
    if run.run_id != run_id {
        return Err(format!("screening produced {} for registered run {run_id}", run.run_id));
    }
    build_review_queue(&run).map_err(|e| e.to_string())
}

async fn get_run(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(RunEnvelope::of(state.store.get(&id)?).into_response(StatusCode::OK))
}

async fn get_queue(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let run = state.store.ready_run(&id)?;
    let queue = run
        .queue
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "wrong_state", "run has no review queue"))?;
    Ok(Json(queue).into_response())
}

#[derive(Debug, Deserialize)]
struct DecisionInput {
    target: DecisionTarget,
    action: DecisionAction,
    #[serde(default)]
    reviewer_id: Option<String>,
    #[serde(default)]
    note: String,
    #[serde(default)]
    timestamp: Option<DateTime<Utc>>,
    #[serde(default)]
    corrected_label: Option<EligibilityLabel>,
}

#[derive(Debug, Deserialize)]
struct DecisionsBody {
    #[serde(default)]
    expected_etag: Option<String>,
    #[serde(default)]
    decisions: Vec<DecisionInput>,
}

async fn post_decisions(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<DecisionsBody>,
) -> ApiResult<Response> {
    let header = |name: header::HeaderName| headers.get(name).and_then(|v| v.to_str().ok()).map(str::to_string);
    let etag = body
        .expected_etag
        .or_else(|| header(header::IF_MATCH))
        .ok_or_else(|| ApiError::invalid("expected_etag or If-Match is required"))?;
    let default_reviewer = headers
        .get("x-reviewer-id")
        .and_then(|v| v.to_str().ok())
        .unwrap_or("reviewer")
        .to_string();
    let now = Utc::now();
    let decisions: Vec<ReviewDecision> = body
        .decisions
        .into_iter()
        .map(|d| ReviewDecision {
            target: d.target,
            action: d.action,
            reviewer_id: d.reviewer_id.unwrap_or_else(|| default_reviewer.clone()),
            note: d.note,
            timestamp: d.timestamp.unwrap_or(now),
            corrected_label: d.corrected_label,
        })
        .collect();
    let store = state.store.clone();
    let run_id = id.clone();
    tokio::task::spawn_blocking(move || store.apply(&run_id, &decisions, &etag))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(RunEnvelope::of(state.store.get(&id)?).into_response(StatusCode::OK))
}

#[derive(Debug, Serialize)]
struct VerdictView {
    trial_id: String,
    trial_title: String,
    verdict: TrialVerdict,
    /// Final eligibility after review; absent while a manual trial is open.
    eligible: Option<bool>,
    dropout_keys: Vec<CriterionKey>,
    all_unknown: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    manual_resolution: Option<ManualResolution>,
}

async fn get_verdicts(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let run = state.store.ready_run(&id)?;
    let mut views: Vec<VerdictView> = run
        .results
        .iter()
        .map(|r| VerdictView {
            trial_id: r.trial_id.clone(),
            trial_title: r.trial_title.clone(),
            verdict: r.verdict,
            eligible: r.eligible(),
            dropout_keys: r.dropout_keys.clone(),
            all_unknown: r.all_unknown,
            manual_resolution: r.manual_resolution.clone(),
        })
        .collect();
    let rank = |v: &VerdictView| match v.eligible {
        Some(true) => 0,
        None => 1,
        Some(false) => 2,
    };
    views.sort_by(|a, b| rank(a).cmp(&rank(b)).then_with(|| a.trial_id.cmp(&b.trial_id)));
    Ok(Json(json!({
        "run_id": run.run_id,
        "state": run.state,
        "etag": run.etag(),
        "verdicts": views,
    }))
    .into_response())
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    gold: Option<String>,
}

async fn get_report(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ReportQuery>,
) -> ApiResult<Response> {
    let run = state.store.ready_run(&id)?;
    match q.gold {
        Some(name) => {
            let gold = state
                .catalog
                .gold_sets
                .get(&name)
                .ok_or_else(|| ApiError::not_found(format!("gold set {name}")))?;
            let report = evaluate(std::slice::from_ref(&run), gold)
                .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", e.to_string()))?;
            Ok(Json(report).into_response())
        }
        None => {
            let stats = workload_stats(&run).map_err(|e| ApiError::new(StatusCode::CONFLICT, "wrong_state", e.to_string()))?;
            Ok(Json(json!({ "run_id": run.run_id, "workload": stats })).into_response())
        }
    }
}

/// Builds the state from a config file's contents and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> Result<(), String> {
    let catalog = Catalog::load(&config.data)?;
    let backend = config.backend.build().map_err(|e| e.to_string())?;
    let store = Store::open(&config.store_dir).map_err(|e| e.to_string())?;
    let engine = EngineConfig {
        max_parallel: config.max_parallel,
        ..EngineConfig::default()
    };
    let state = AppState::new(store, catalog, backend, engine, config.max_jobs);
    state.resume_pending();
    let listener = tokio::net::TcpListener::bind(&config.listen)
        .await
        .map_err(|e| format!("bind {}: {e}", config.listen))?;
    tracing::info!(addr = %config.listen, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| e.to_string())
}
