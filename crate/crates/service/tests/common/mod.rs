#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;
use trialscreen_core::engine::EngineConfig;
use trialscreen_core::gateway::{CompletionBackend, MockBackend, MockScript};
use trialscreen_service::{AppState, Catalog, Store};

pub fn catalog() -> Catalog {
    let mut catalog = Catalog {
        profiles: trialscreen_fixtures::profiles()
            .into_iter()
            .map(|p| (p.profile_id.clone(), p))
            .collect(),
        ..Catalog::default()
    };
    catalog.trial_sets.insert("desk".into(), trialscreen_fixtures::desk::trials());
    catalog.gold_sets.insert("desk".into(), trialscreen_fixtures::desk::gold());
    let cohort = trialscreen_fixtures::paper::paper_fixture();
    catalog.trial_sets.insert("cohort".into(), cohort.trials);
    catalog.gold_sets.insert("cohort".into(), cohort.gold);
    catalog
}

pub fn state_with(dir: &std::path::Path, script: MockScript) -> AppState {
    let backend: Arc<dyn CompletionBackend> = Arc::new(MockBackend::new(script));
    AppState::new(Store::open(dir).unwrap(), catalog(), backend, EngineConfig::default(), 2)
}

/// Mock script covering both the desk and the cohort fixtures.
pub fn script() -> MockScript {
    let mut s = trialscreen_fixtures::desk::mock_script();
    s.rules.extend(trialscreen_fixtures::paper::paper_fixture().script.rules);
    s
}

pub struct Server {
    pub base: String,
    pub client: reqwest::Client,
    pub state: AppState,
}

pub async fn start(state: AppState) -> Server {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = trialscreen_service::router(state.clone());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    Server {
        base: format!("http://{addr}"),
        client: reqwest::Client::new(),
        state,
    }
}

impl Server {
    pub async fn get(&self, path: &str) -> (u16, Value) {
        let r = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    pub async fn get_text(&self, path: &str) -> String {
        self.client.get(format!("{}{path}", self.base)).send().await.unwrap().text().await.unwrap()
    }

    pub async fn post(&self, path: &str, body: &Value, key: Option<&str>) -> (u16, Value) {
        let mut req = self.client.post(format!("{}{path}", self.base)).json(body);
        if let Some(k) = key {
            req = req.header("Idempotency-Key", k);
        }
        let r = req.send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    /// Polls until the run leaves the pending state.
    pub async fn wait(&self, run_id: &str) -> Value {
        for _ in 0..600 {
            let (_, body) = self.get(&format!("/runs/{run_id}")).await;
            if body["status"] != "pending" {
                return body;
            }
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        panic!("run {run_id} did not finish");
    }

    pub async fn create(&self, profile: &str, trial_set: &str) -> String {
        let body = serde_json::json!({ "profile_id": profile, "trial_set": trial_set, "match_condition": trial_set == "cohort" });
        let (status, resp) = self.post("/runs", &body, None).await;
        assert!(status == 202 || status == 200, "{resp}");
        let id = resp["run_id"].as_str().unwrap().to_string();
        let done = self.wait(&id).await;
        assert_eq!(done["status"], "ready", "{done}");
        id
    }
}
