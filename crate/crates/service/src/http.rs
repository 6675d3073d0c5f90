//! JSON API over a [`SessionStore`]. Handlers hand the blocking pipeline to
//! tokio's blocking pool.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clarify_core::clarification::SessionEngine;
use clarify_core::pipeline::{SessionStore, StoreError};
use clarify_core::{ClarificationSet, DialogueState, Status};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<SessionStore>,
    pub engine: Arc<SessionEngine>,
}

/// The session as clients see it: the full state plus the questions that
/// are currently waiting for an answer.
#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    #[serde(flatten)]
    pub state: DialogueState,
    pub pending_questions: Option<ClarificationSet>,
}

impl From<DialogueState> for SessionView {
    fn from(state: DialogueState) -> Self {
        let pending_questions = state.pending_questions().cloned();
        Self { state, pending_questions }
    }
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub prompt: String,
}

#[derive(Debug, Deserialize)]
pub struct Respond {
    #[serde(default)]
    pub answers: BTreeMap<String, String>,
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::EmptyPrompt => StatusCode::BAD_REQUEST,
            StoreError::NotFound(_) => StatusCode::NOT_FOUND,
            StoreError::Busy(_) | StoreError::WrongStatus(_) => StatusCode::CONFLICT,
            StoreError::UnknownQuestion(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn session_response(state: DialogueState, ok: StatusCode) -> Response {
    let code = if state.status == Status::Aborted {
        StatusCode::BAD_GATEWAY
    } else {
        ok
    };
    (code, Json(SessionView::from(state))).into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, StoreError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

async fn create_session(State(app): State<AppState>, body: Option<Json<CreateSession>>) -> Result<Response, ApiError> {
    let prompt = body.map(|Json(b)| b.prompt).unwrap_or_default();
    if prompt.trim().is_empty() {
        return Err(StoreError::EmptyPrompt.into());
    }
    let state = blocking(move || app.store.create(&app.engine, &prompt)).await?;
    Ok(session_response(state, StatusCode::CREATED))
}

async fn respond(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<Respond>,
) -> Result<Response, ApiError> {
    let state = blocking(move || app.store.respond(&app.engine, &id, body.answers)).await?;
    Ok(session_response(state, StatusCode::OK))
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(app.store.get(&id)?.into()))
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/responses", post(respond))
        .route("/healthz", get(healthz))
        .with_state(state)
}
