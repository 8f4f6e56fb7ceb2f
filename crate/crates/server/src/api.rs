//! Routes.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/concepts` | concept trees for the browser |
//! | POST | `/api/queries[?label=]` | submit a query document, 201 `{executionId, state}` |
//! | GET | `/api/queries` | history, restricted to the `x-owner` header if sent |
//! | GET | `/api/queries/{id}` | execution record |
//! | PATCH | `/api/queries/{id}` | `{"label": ...}` renames a history entry |
//! | DELETE | `/api/queries/{id}` | cancels if running and removes it |
//! | GET | `/api/queries/{id}/result.csv` | 200 when DONE, 409 while running, 410 when failed, canceled or expired |
//! | GET | `/api/admin/workers` | registered workers and their buckets |
//! | POST | `/api/admin/dataset` | replace the dataset |
//! | POST | `/api/admin/concepts` | register a concept descriptor |
//! | POST | `/api/admin/imports` | load an import container (raw bytes) |
//!
//! Invalid submissions answer 400 with `{"errors": [...]}`; other errors
//! carry `{"error": "..."}`.

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cohort_cluster::{ClusterError, ExecutionState};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::{App, ServerError, StoredExecution, SubmitError, DEFAULT_OWNER};

pub const OWNER_HEADER: &str = "x-owner";

pub fn router(app: App) -> Router {
    Router::new()
        .route("/api/concepts", get(concepts))
        .route("/api/queries", post(submit).get(history))
        .route("/api/queries/{id}", get(status).patch(rename).delete(remove))
        .route("/api/queries/{id}/result.csv", get(result))
        .route("/api/admin/workers", get(workers))
        .route("/api/admin/dataset", post(set_dataset))
        .route("/api/admin/concepts", post(add_concept))
        .route("/api/admin/imports", post(load_import))
        .layer(axum::extract::DefaultBodyLimit::max(1 << 30))
        .with_state(app)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({"error": message.into()}))).into_response()
}

fn invalid(errors: Vec<String>) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({"errors": errors}))).into_response()
}

fn not_found(id: &str) -> Response {
    error(StatusCode::NOT_FOUND, format!("unknown execution '{id}'"))
}

fn owner(headers: &HeaderMap) -> Option<String> {
    headers
        .get(OWNER_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(str::to_string)
}

async fn concepts(State(app): State<App>) -> Response {
    let doc = match app.manager().registry() {
        Some(r) => r.describe(),
        None => json!({"dataset": null, "secondaryIds": [], "concepts": []}),
    };
    Json(doc).into_response()
}

#[derive(Deserialize)]
struct SubmitParams {
    label: Option<String>,
}

async fn submit(State(app): State<App>, headers: HeaderMap, Query(params): Query<SubmitParams>, body: Bytes) -> Response {
    let doc: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return invalid(vec![format!("body is not JSON: {e}")]),
    };
    let owner = owner(&headers).unwrap_or_else(|| DEFAULT_OWNER.into());
    match app.submit(&owner, params.label, doc) {
        Ok(r) => (
            StatusCode::CREATED,
            [(header::LOCATION, format!("/api/queries/{}", r.execution_id))],
            Json(json!({"executionId": r.execution_id, "state": r.state})),
        )
            .into_response(),
        Err(SubmitError::Invalid(errors)) => invalid(errors),
        Err(SubmitError::Unavailable(e)) => error(StatusCode::SERVICE_UNAVAILABLE, e),
    }
}

async fn history(State(app): State<App>, headers: HeaderMap) -> Response {
    Json(app.store().list(owner(&headers).as_deref())).into_response()
}

/// The stored record; while running, the line count so far.
fn status_body(app: &App, mut record: StoredExecution) -> StoredExecution {
    if !record.state.is_terminal() {
        if let Some(info) = app.manager().status(&record.execution_id) {
            record.line_count = Some(info.line_count);
        }
    }
    record
}

async fn status(State(app): State<App>, Path(id): Path<String>) -> Response {
    match app.store().get(&id) {
        Some(r) => Json(status_body(&app, r)).into_response(),
        None => not_found(&id),
    }
}

#[derive(Deserialize)]
struct Rename {
    label: Option<String>,
}

async fn rename(State(app): State<App>, Path(id): Path<String>, body: Bytes) -> Response {
    let rename: Rename = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return invalid(vec![e.to_string()]),
    };
    match app.store().update(&id, |r| r.label = rename.label) {
        Ok(Some(r)) => Json(status_body(&app, r)).into_response(),
        Ok(None) => not_found(&id),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn remove(State(app): State<App>, Path(id): Path<String>) -> Response {
    let Some(record) = app.store().get(&id) else { return not_found(&id) };
    if !record.state.is_terminal() {
        app.manager().cancel(&id);
    }
    match app.store().delete(&id) {
        Ok(_) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn result(State(app): State<App>, Path(id): Path<String>) -> Response {
    let Some(record) = app.store().get(&id) else { return not_found(&id) };
    match record.state {
        ExecutionState::Done if record.expired => error(StatusCode::GONE, "result has expired"),
        ExecutionState::Done => match app.store().read_result(&id) {
            Ok(bytes) => ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], bytes).into_response(),
            Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("reading result: {e}")),
        },
        ExecutionState::Failed | ExecutionState::Canceled => error(
            StatusCode::GONE,
            record.error.unwrap_or_else(|| format!("execution is {}", record.state)),
        ),
        ExecutionState::Created | ExecutionState::Running => {
            error(StatusCode::CONFLICT, format!("execution is {}", record.state))
        }
    }
}

async fn workers(State(app): State<App>) -> Response {
    Json(app.manager().workers()).into_response()
}

fn admin_outcome(outcome: Result<(), ServerError>) -> Response {
    match outcome {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e @ (ServerError::Core(_) | ServerError::Json(_) | ServerError::Cluster(ClusterError::Core(_)))) => {
            invalid(vec![e.to_string()])
        }
        Err(e) => error(StatusCode::CONFLICT, e.to_string()),
    }
}

async fn set_dataset(State(app): State<App>, body: Bytes) -> Response {
    let outcome = serde_json::from_slice(&body)
        .map_err(ServerError::from)
        .and_then(|doc| app.set_dataset(&doc));
    admin_outcome(outcome)
}

async fn add_concept(State(app): State<App>, body: Bytes) -> Response {
    let outcome = serde_json::from_slice(&body)
        .map_err(ServerError::from)
        .and_then(|doc| app.add_concept(doc));
    admin_outcome(outcome)
}

async fn load_import(State(app): State<App>, body: Bytes) -> Response {
    let outcome = tokio::task::spawn_blocking(move || app.load_import(&body)).await;
    match outcome {
        Ok(outcome) => admin_outcome(outcome),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}
