//! Operator HTTP API.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::Engine;
use crate::action::{ActionError, Decision};
use crate::gateway::{ClockSource, Gateway};
use crate::incident::{AdmissionKind, IncidentState};

#[derive(Clone)]
struct App {
    engine: Arc<Engine>,
    gateway: Arc<Gateway>,
}

fn error(status: StatusCode, code: &str, message: impl ToString) -> Response {
    (status, Json(json!({"error": code, "message": message.to_string()}))).into_response()
}

pub fn router(engine: Arc<Engine>, gateway: Arc<Gateway>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/alerts", post(post_alert))
        .route("/incidents", get(list_incidents))
        .route("/incidents/{id}", get(get_incident))
        .route("/incidents/{id}/trace", get(get_trace))
        .route("/approvals", get(list_approvals))
        .route("/approvals/{id}", post(decide))
        .with_state(App { engine, gateway })
}

/// Serves until the listener fails or `shutdown` resolves.
pub async fn serve(
    addr: SocketAddr,
    engine: Arc<Engine>,
    gateway: Arc<Gateway>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(engine, gateway)).with_graceful_shutdown(shutdown).await
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

async fn post_alert(State(app): State<App>, body: Bytes) -> Response {
    let now = app.engine.runtime().now();
    let alert = match app.gateway.ingest(&body, ClockSource::Stamp(now)) {
        Ok(a) => a,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.code(), e),
    };
    let alert_id = alert.alert_id.clone();
    let adm = app.engine.handle_alert(alert);
    let kind = match adm.kind {
        AdmissionKind::Opened => "opened",
        AdmissionKind::Attached => "attached",
        AdmissionKind::Duplicate => "duplicate",
    };
    (StatusCode::ACCEPTED, Json(json!({"alert_id": alert_id, "incident_id": adm.incident_id, "admission": kind})))
        .into_response()
}

#[derive(Deserialize)]
struct StateFilter {
    state: Option<String>,
}

async fn list_incidents(State(app): State<App>, Query(f): Query<StateFilter>) -> Response {
    let state = match f.state.as_deref().map(str::parse::<IncidentState>) {
        None => None,
        Some(Ok(s)) => Some(s),
        Some(Err(e)) => return error(StatusCode::BAD_REQUEST, "INVALID_STATE", e),
    };
    Json(app.engine.services.incidents.list(state)).into_response()
}

async fn get_incident(State(app): State<App>, Path(id): Path<String>) -> Response {
    match app.engine.services.incidents.get(&id) {
        Some(r) => Json(r).into_response(),
        None => error(StatusCode::NOT_FOUND, "NOT_FOUND", format!("no incident `{id}`")),
    }
}

async fn get_trace(State(app): State<App>, Path(id): Path<String>) -> Response {
    if app.engine.services.incidents.get(&id).is_none() {
        return error(StatusCode::NOT_FOUND, "NOT_FOUND", format!("no incident `{id}`"));
    }
    Json(app.engine.services.trace(&id).unwrap_or_default()).into_response()
}

#[derive(Deserialize)]
struct DecisionFilter {
    state: Option<String>,
}

async fn list_approvals(State(app): State<App>, Query(f): Query<DecisionFilter>) -> Response {
    let state = match f.state.as_deref().map(str::to_ascii_uppercase).as_deref() {
        None | Some("PENDING") => Some(Decision::Pending),
        Some("ALL") => None,
        Some("APPROVED") => Some(Decision::Approved),
        Some("DENIED") => Some(Decision::Denied),
        Some("EXPIRED") => Some(Decision::Expired),
        Some(other) => return error(StatusCode::BAD_REQUEST, "INVALID_STATE", format!("unknown decision `{other}`")),
    };
    let actions = &app.engine.services.actions;
    actions.expire_stale(app.engine.runtime().now());
    Json(actions.approvals(state)).into_response()
}

#[derive(Deserialize)]
struct DecisionBody {
    decision: String,
    actor: String,
}

async fn decide(State(app): State<App>, Path(id): Path<String>, body: Bytes) -> Response {
    let req: DecisionBody = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, "MALFORMED_PAYLOAD", e),
    };
    let approve = match req.decision.to_ascii_lowercase().as_str() {
        "approve" | "approved" => true,
        "deny" | "denied" => false,
        other => return error(StatusCode::BAD_REQUEST, "INVALID_DECISION", format!("unknown decision `{other}`")),
    };
    if req.actor.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "INVALID_ACTOR", "actor must be non-empty");
    }
    let engine = app.engine.clone();
    let joined = tokio::task::spawn_blocking(move || {
        let actions = &engine.services.actions;
        actions.expire_stale(engine.runtime().now());
        actions.resolve_approval(&id, approve, &req.actor, engine.runtime().as_ref())
    })
    .await;
    match joined {
        Ok(Ok(result)) => Json(result).into_response(),
        Ok(Err(e @ ActionError::UnknownApproval(_))) => error(StatusCode::NOT_FOUND, "UNKNOWN_APPROVAL", e),
        Ok(Err(e @ ActionError::AlreadyDecided(_))) => error(StatusCode::CONFLICT, "ALREADY_DECIDED", e),
        Ok(Err(e)) => error(StatusCode::UNPROCESSABLE_ENTITY, "ACTION_ERROR", e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e),
    }
}
