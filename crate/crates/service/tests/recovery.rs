mod common;

use std::fs;

use serde_json::json;
use trialscreen_service::{RunStatus, Store};

use common::{script, start, state_with};

#[tokio::test(flavor = "multi_thread")]
async fn restart_reloads_runs_with_identical_state() {
    let dir = tempfile::tempdir().unwrap();
    let (id, before) = {
        let srv = start(state_with(dir.path(), script())).await;
        let id = srv.create("FP001", "desk").await;
        let (_, queue) = srv.get(&format!("/runs/{id}/queue")).await;
        let mut etag = srv.get(&format!("/runs/{id}")).await.1["etag"].as_str().unwrap().to_string();
        for item in queue["items"].as_array().unwrap() {
            let body = json!({"expected_etag": etag, "decisions": [
                {"target": {"criterion": item["criterion"]["key"]}, "action": "confirm_dropout", "reviewer_id": "dr-a"}
            ]});
            let (status, env) = srv.post(&format!("/runs/{id}/decisions"), &body, None).await;
            assert_eq!(status, 200);
            etag = env["etag"].as_str().unwrap().to_string();
        }
        (id.clone(), srv.state.store.ready_run(&id).unwrap())
    };

    let reopened = Store::open(dir.path()).unwrap();
    assert_eq!(reopened.ready_run(&id).unwrap(), before);

    // Without the snapshot the log alone rebuilds the same run.
    fs::remove_file(reopened.run_dir(&id).join("snapshot.json")).unwrap();
    let replayed = Store::open(dir.path()).unwrap();
    assert_eq!(replayed.ready_run(&id).unwrap(), before);

    // A snapshot left behind by a crash before the last write is ignored.
    let mut stale = before.clone();
    stale.version -= 1;
    fs::write(
        replayed.run_dir(&id).join("snapshot.json"),
        serde_json::to_string(&stale).unwrap(),
    )
    .unwrap();
    let again = Store::open(dir.path()).unwrap();
    assert_eq!(again.ready_run(&id).unwrap(), before);
}

#[tokio::test(flavor = "multi_thread")]
async fn pending_runs_resume_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let request = trialscreen_service::CreateRunRequest {
        profile_id: "FP005".into(),
        trial_set: "desk".into(),
        params: Default::default(),
        combined: false,
        match_condition: false,
    };
    let run_id = {
        let state = state_with(dir.path(), script());
        let profile = state.catalog.profiles["FP005"].clone();
        let trials = state.catalog.trial_sets["desk"].clone();
        let id = trialscreen_core::engine::derive_run_id(&profile, &trials, &request.params, &state.engine);
        state.store.create(&id, &request, None).unwrap();
        id
    };
    let state = state_with(dir.path(), script());
    assert_eq!(state.store.get(&run_id).unwrap().status, RunStatus::Pending);
    let srv = start(state).await;
    srv.state.resume_pending();
    let done = srv.wait(&run_id).await;
    assert_eq!(done["status"], "ready", "{done}");
}
