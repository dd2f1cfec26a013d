//! JSON-over-HTTP routes for the quiz loop.

use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::store::{ServiceError, SessionStore};

/// All operations share one lock, which also totally orders log appends.
pub type SharedStore = Arc<Mutex<SessionStore>>;

pub fn router(store: SharedStore) -> Router {
    Router::new()
        .route("/students", post(register))
        .route("/banks", get(banks))
        .route("/banks/{bank_id}/question", post(question))
        .route("/banks/{bank_id}/answer", post(answer))
        .route("/banks/{bank_id}/grade", get(grade))
        .route("/admin/export", get(export))
        .with_state(store)
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::EmptyName | ServiceError::AnswerIndex { .. } => StatusCode::BAD_REQUEST,
            ServiceError::UnknownStudent(_) | ServiceError::UnknownBank(_) => StatusCode::NOT_FOUND,
            ServiceError::StaleToken | ServiceError::DuplicateBank(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

fn lock(store: &SharedStore) -> std::sync::MutexGuard<'_, SessionStore> {
    // A panic while holding the lock cannot leave a half-applied answer: the
    // store mutates only after validation and rolls back failed appends.
    store.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Debug, Deserialize)]
struct RegisterRequest {
    name: String,
    #[serde(default)]
    consent: bool,
}

#[derive(Debug, Serialize)]
struct RegisterResponse {
    student_id: String,
    name: String,
    consent: bool,
}

async fn register(
    State(store): State<SharedStore>,
    Json(req): Json<RegisterRequest>,
) -> Result<(StatusCode, Json<RegisterResponse>), ServiceError> {
    let reg = lock(&store).register(&req.name, req.consent)?;
    Ok((
        StatusCode::CREATED,
        Json(RegisterResponse {
            student_id: reg.student_id,
            name: reg.name,
            consent: reg.consent,
        }),
    ))
}

async fn banks(State(store): State<SharedStore>) -> impl IntoResponse {
    Json(lock(&store).banks())
}

#[derive(Debug, Deserialize)]
struct StudentRequest {
    student_id: String,
}

async fn question(
    State(store): State<SharedStore>,
    Path(bank_id): Path<String>,
    Json(req): Json<StudentRequest>,
) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(lock(&store).next_question(&req.student_id, &bank_id)?))
}

#[derive(Debug, Deserialize)]
struct AnswerRequest {
    student_id: String,
    question_token: String,
    presented_index: usize,
}

async fn answer(
    State(store): State<SharedStore>,
    Path(bank_id): Path<String>,
    Json(req): Json<AnswerRequest>,
) -> Result<impl IntoResponse, ServiceError> {
    let result = lock(&store).submit_answer(&req.student_id, &bank_id, &req.question_token, req.presented_index)?;
    Ok(Json(result))
}

async fn grade(
    State(store): State<SharedStore>,
    Path(bank_id): Path<String>,
    Query(req): Query<StudentRequest>,
) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(lock(&store).get_grade(&req.student_id, &bank_id)?))
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
}

async fn export(State(store): State<SharedStore>, Query(range): Query<ExportQuery>) -> impl IntoResponse {
    let body: String = lock(&store)
        .export(range.from, range.to)
        .into_iter()
        .map(|r| r.to_json_line() + "\n")
        .collect();
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body)
}
