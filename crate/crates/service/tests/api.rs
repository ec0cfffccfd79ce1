use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use imfbo_core::campaign::{CampaignConfig, CampaignMode};
use imfbo_core::gp::McmcConfig;
use imfbo_core::mean::MeanModelSpec;
use imfbo_service::{router, SessionManager};
use serde_json::{json, Value};
use tower::ServiceExt;

fn config(seed: u64) -> CampaignConfig {
    let mut c = CampaignConfig::problem2(MeanModelSpec::Zero).with_seed(seed);
    c.mode = CampaignMode::Interactive;
    c.surrogate.mcmc = McmcConfig { warmup: 60, samples: 30, ..McmcConfig::default() };
    c.grid_resolution = 51;
    c.stall_window = 100;
    c
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn create(app: &Router, cfg: &CampaignConfig) -> String {
    let (status, body) = call_json(app, "POST", "/sessions", Some(serde_json::to_value(cfg).unwrap())).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["id"].as_str().unwrap().to_string()
}

fn app() -> Router {
    router(Arc::new(SessionManager::in_memory()))
}

#[tokio::test]
async fn create_and_get() {
    let app = app();
    let a = create(&app, &config(0)).await;
    let b = create(&app, &config(0)).await;
    assert_ne!(a, b);
    let (status, snap) = call_json(&app, "GET", &format!("/sessions/{a}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(snap["iteration"], 0);
    assert_eq!(snap["observations"]["y"].as_array().unwrap().len(), 10);
    assert_eq!(snap["status"], "Running");

    let (status, _) = call_json(&app, "GET", "/sessions/missing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn invalid_config_names_fields() {
    let app = app();
    let mut cfg = config(0);
    cfg.init_count = 1;
    let (status, body) = call_json(&app, "POST", "/sessions", Some(serde_json::to_value(&cfg).unwrap())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let fields: Vec<&str> = body["issues"].as_array().unwrap().iter().map(|i| i["field"].as_str().unwrap()).collect();
    assert!(fields.contains(&"init_count"), "{body}");

    let (status, body) = call_json(&app, "POST", "/sessions", Some(json!({"objective": 3}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["issues"][0]["field"], "body");
}

#[tokio::test]
async fn advance_returns_snapshots_with_grids() {
    let app = app();
    let id = create(&app, &config(1)).await;
    let (status, body) = call_json(&app, "POST", &format!("/sessions/{id}/advance?steps=3"), None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let snaps = body["snapshots"].as_array().unwrap();
    assert_eq!(snaps.len(), 3);
    let last = &snaps[2];
    assert_eq!(last["iteration"], 3);
    assert_eq!(last["status"], "Running");
    let grids = &last["surrogate"];
    assert_eq!(grids["grid_spec"]["points"], 51);
    for key in ["grid", "mu_high", "var_high", "mu_low", "var_low", "acquisition_low", "acquisition_high"] {
        assert_eq!(grids[key].as_array().unwrap().len(), 51, "{key}");
    }

    let (status, _) = call_json(&app, "POST", &format!("/sessions/{id}/advance?steps=0"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn policy_round_trip_and_rejection() {
    let app = app();
    let id = create(&app, &config(2)).await;
    call_json(&app, "POST", &format!("/sessions/{id}/advance?steps=2"), None).await;

    let bad = json!({"changes": [{"kind": "convergence", "max_iterations": 2}]});
    let (status, body) = call_json(&app, "POST", &format!("/sessions/{id}/policy"), Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["reasons"][0].as_str().unwrap().contains("M_new > k"), "{body}");

    let peak = serde_json::to_value(MeanModelSpec::gaussian_peak()).unwrap();
    let good = json!({"changes": [
        {"kind": "surrogate", "mean": peak},
        {"kind": "cost_ratio", "cost_ratio": 2.0}
    ]});
    let (status, body) = call_json(&app, "POST", &format!("/sessions/{id}/policy"), Some(good)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["queued"], false);
    let log = body["snapshot"]["policy_log"].as_array().unwrap();
    assert_eq!(log[0]["kind"], "surrogate");
    assert_eq!(log[1]["kind"], "cost_ratio");
    assert_eq!(log[1]["issuer"], "human");
    assert_eq!(log[1]["issued_at"], 2);
}

#[tokio::test]
async fn stall_prompt_blocks_advance_until_answered() {
    let app = app();
    let mut cfg = config(4);
    cfg.stall_window = 1;
    let id = create(&app, &cfg).await;
    let (_, body) = call_json(&app, "POST", &format!("/sessions/{id}/advance?steps=15"), None).await;
    let last = body["snapshots"].as_array().unwrap().last().unwrap().clone();
    assert_eq!(last["status"], "AwaitingPolicy");
    let options: Vec<&str> =
        last["pending_prompt"]["options"].as_array().unwrap().iter().map(|o| o.as_str().unwrap()).collect();
    assert_eq!(options, ["parameter space", "surrogate model", "acquisition function", "convergence criteria"]);

    let (status, body) = call_json(&app, "POST", &format!("/sessions/{id}/advance"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["error"].as_str().unwrap().contains("policy"));

    let (status, body) =
        call_json(&app, "POST", &format!("/sessions/{id}/policy"), Some(json!({"changes": [{"kind": "no_change"}]}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["snapshot"]["status"], "Running");
}

#[tokio::test]
async fn exports() {
    let app = app();
    let id = create(&app, &config(3)).await;
    let (status, doc) = call_json(&app, "GET", &format!("/sessions/{id}/export"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["observations"].as_array().unwrap().len(), 10);
    let (status, csv) = call(&app, "GET", &format!("/sessions/{id}/observations.csv"), None).await;
    assert_eq!(status, StatusCode::OK);
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next(), Some("x0,f,y"));
    assert_eq!(text.lines().count(), 11);
}

#[tokio::test]
async fn persist_and_restore_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(Arc::new(SessionManager::open(dir.path()).unwrap()));
    let id = create(&app, &config(5)).await;
    call_json(&app, "POST", &format!("/sessions/{id}/advance?steps=1"), None).await;
    let (status, body) = call_json(&app, "POST", &format!("/sessions/{id}/persist"), None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let (_, before) = call(&app, "GET", &format!("/sessions/{id}/export"), None).await;
    let (status, _) = call_json(&app, "POST", &format!("/sessions/{id}/restore"), None).await;
    assert_eq!(status, StatusCode::OK);
    let (_, after) = call(&app, "GET", &format!("/sessions/{id}/export"), None).await;
    assert_eq!(before, after);

    let reopened = router(Arc::new(SessionManager::open(dir.path()).unwrap()));
    let (status, snap) = call_json(&reopened, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(snap["iteration"], 1);
}

#[tokio::test]
async fn event_stream_replays_history() {
    let app = app();
    let id = create(&app, &config(6)).await;
    call_json(&app, "POST", &format!("/sessions/{id}/advance?steps=1"), None).await;
    let req = Request::builder().uri(format!("/sessions/{id}/events")).body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    let mut body = resp.into_body();
    let mut text = String::new();
    while !text.contains("IterationCompleted") {
        let frame = tokio::time::timeout(Duration::from_secs(10), body.frame()).await.unwrap().unwrap().unwrap();
        if let Ok(data) = frame.into_data() {
            text.push_str(std::str::from_utf8(&data).unwrap());
        }
    }
    assert!(text.contains("event: Created"));
    assert!(text.contains("id: 1"));
    let payload = text
        .lines()
        .filter_map(|l| l.strip_prefix("data: "))
        .map(|d| serde_json::from_str::<Value>(d).unwrap())
        .find(|v| v["type"] == "IterationCompleted")
        .unwrap();
    assert_eq!(payload["seq"], 1);
    assert_eq!(payload["snapshot"]["iteration"], 1);
}
