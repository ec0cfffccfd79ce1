//! HTTP routes. All payloads are JSON except the CSV export and the event
//! stream.

use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use imfbo_core::campaign::{CampaignConfig, FieldIssue, PolicyChange, PolicyKind};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::error::ServiceError;
use crate::events::EventEnvelope;
use crate::manager::SessionManager;

pub const MAX_STEPS_PER_REQUEST: usize = 1000;

type AppState = Arc<SessionManager>;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, body) = match &self {
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, json!({ "error": self.to_string() })),
            ServiceError::InvalidConfig(issues) => {
                (StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": self.to_string(), "issues": issues }))
            }
            ServiceError::Conflict(_) => (StatusCode::CONFLICT, json!({ "error": self.to_string() })),
            ServiceError::PolicyRejected(reasons) => {
                (StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": self.to_string(), "reasons": reasons }))
            }
            ServiceError::Core(e @ imfbo_core::Error::SchemaVersion { .. }) => {
                (StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": e.to_string() }))
            }
            ServiceError::Core(e) => (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": e.to_string() })),
        };
        (status, Json(body)).into_response()
    }
}

fn body_issue(message: String) -> ServiceError {
    ServiceError::InvalidConfig(vec![FieldIssue { field: "body".into(), message }])
}

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(snapshot))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/policy", post(policy))
        .route("/sessions/{id}/persist", post(persist))
        .route("/sessions/{id}/restore", post(restore))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/observations.csv", get(observations))
        .with_state(manager)
}

async fn create(State(mgr): State<AppState>, body: Bytes) -> Result<Response, ServiceError> {
    let cfg: CampaignConfig = serde_json::from_slice(&body).map_err(|e| body_issue(e.to_string()))?;
    let (id, snapshot) = tokio::task::spawn_blocking(move || mgr.create(cfg)).await.map_err(join_error)??;
    Ok((StatusCode::CREATED, Json(json!({ "id": id, "snapshot": snapshot }))).into_response())
}

async fn list(State(mgr): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({ "sessions": mgr.ids() }))
}

async fn snapshot(State(mgr): State<AppState>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(Json(mgr.snapshot(&id)?).into_response())
}

#[derive(Deserialize)]
struct AdvanceQuery {
    steps: Option<usize>,
}

fn join_error(e: tokio::task::JoinError) -> ServiceError {
    ServiceError::Core(imfbo_core::Error::Io(std::io::Error::other(e.to_string())))
}

async fn advance(
    State(mgr): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<AdvanceQuery>,
) -> Result<Response, ServiceError> {
    let steps = q.steps.unwrap_or(1);
    if steps == 0 || steps > MAX_STEPS_PER_REQUEST {
        return Err(ServiceError::Conflict(format!("steps must lie in 1..={MAX_STEPS_PER_REQUEST}")));
    }
    let snapshots = tokio::task::spawn_blocking(move || mgr.advance(&id, steps)).await.map_err(join_error)??;
    Ok(Json(json!({ "snapshots": snapshots })).into_response())
}

/// `{"changes": [{"kind": "cost_ratio", "cost_ratio": 2.0}, ...]}`.
#[derive(Deserialize)]
struct PolicyRequest {
    changes: Vec<PolicyKind>,
}

async fn policy(State(mgr): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response, ServiceError> {
    let req: PolicyRequest =
        serde_json::from_slice(&body).map_err(|e| ServiceError::PolicyRejected(vec![format!("body: {e}")]))?;
    let changes: Vec<PolicyChange> = req.changes.into_iter().map(PolicyChange::human).collect();
    let ack = tokio::task::spawn_blocking(move || mgr.submit_policy(&id, changes)).await.map_err(join_error)??;
    let status = if ack.queued { StatusCode::ACCEPTED } else { StatusCode::OK };
    Ok((status, Json(ack)).into_response())
}

async fn persist(State(mgr): State<AppState>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let path = mgr.persist(&id)?;
    Ok(Json(json!({ "path": path })).into_response())
}

async fn restore(State(mgr): State<AppState>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(Json(mgr.restore(&id)?).into_response())
}

async fn export(State(mgr): State<AppState>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(([(header::CONTENT_TYPE, "application/json")], mgr.export(&id)?).into_response())
}

async fn observations(State(mgr): State<AppState>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(([(header::CONTENT_TYPE, "text/csv")], mgr.observations_csv(&id)?).into_response())
}

#[derive(Deserialize)]
struct EventsQuery {
    /// Only events with `seq >= since` are sent.
    since: Option<u64>,
}

fn to_sse(e: &EventEnvelope) -> SseEvent {
    let data = serde_json::to_string(e).unwrap_or_else(|err| json!({ "error": err.to_string() }).to_string());
    SseEvent::default().id(e.seq.to_string()).event(e.event.name()).data(data)
}

/// Server-sent events: the stored history first, then live events.
async fn events(
    State(mgr): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ServiceError> {
    let since = q.since.unwrap_or(0);
    let (history, rx) = mgr.subscribe(&id)?;
    let next = history.len() as u64;
    let past: Vec<_> = history.iter().filter(|e| e.seq >= since).map(|e| Ok(to_sse(e))).collect();
    let live = stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(e) => return Some((e, rx)),
                Err(RecvError::Lagged(_)) => continue,
                Err(RecvError::Closed) => return None,
            }
        }
    })
    .filter(move |e| futures::future::ready(e.seq >= next.max(since)))
    .map(|e| Ok(to_sse(&e)));
    Ok(Sse::new(stream::iter(past).chain(live)).keep_alive(KeepAlive::default()))
}
