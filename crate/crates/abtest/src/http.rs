//! JSON API and audio file serving.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::error::AbError;
use crate::service::{safe_relative, AbService, Side};
use crate::session::PairSpec;

impl IntoResponse for AbError {
    fn into_response(self) -> Response {
        let status = match &self {
            AbError::UnknownSession(_) | AbError::UnknownTrial(_) => StatusCode::NOT_FOUND,
            AbError::BadRequest(_) | AbError::MissingFiles(_) | AbError::ScoreOutOfRange(_) => StatusCode::BAD_REQUEST,
            AbError::Duplicate { .. } | AbError::NotPlayed { .. } | AbError::NoVotes => StatusCode::CONFLICT,
            AbError::Corrupt(_) | AbError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "error": self.to_string() });
        if let AbError::MissingFiles(files) = &self {
            body["missing"] = json!(files);
        }
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, AbError>;

fn json_body<T>(body: std::result::Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    body.map(|Json(v)| v).map_err(|e| AbError::BadRequest(e.body_text()))
}

#[derive(Deserialize)]
pub struct CreateSession {
    pub manifest: Vec<PairSpec>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Deserialize)]
pub struct ListenerQuery {
    pub listener: String,
}

#[derive(Deserialize)]
pub struct PlayedBody {
    pub trial_id: u32,
    pub listener_id: String,
    pub side: Side,
}

#[derive(Deserialize)]
pub struct VoteBody {
    pub trial_id: u32,
    pub listener_id: String,
    pub score: i64,
}

type Svc = State<Arc<AbService>>;

async fn create_session(State(svc): Svc, body: std::result::Result<Json<CreateSession>, JsonRejection>) -> ApiResult<Response> {
    let req = json_body(body)?;
    let info = svc.create_session(req.manifest, req.seed)?;
    Ok((StatusCode::CREATED, Json(info)).into_response())
}

async fn next_trial(
    State(svc): Svc,
    UrlPath(id): UrlPath<String>,
    q: std::result::Result<Query<ListenerQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = q.map_err(|e| AbError::BadRequest(e.body_text()))?;
    Ok(Json(svc.next_trial(&id, &q.listener)?).into_response())
}

async fn played(State(svc): Svc, UrlPath(id): UrlPath<String>, body: std::result::Result<Json<PlayedBody>, JsonRejection>) -> ApiResult<Response> {
    let b = json_body(body)?;
    svc.mark_played(&id, b.trial_id, &b.listener_id, b.side)?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn vote(State(svc): Svc, UrlPath(id): UrlPath<String>, body: std::result::Result<Json<VoteBody>, JsonRejection>) -> ApiResult<Response> {
    let b = json_body(body)?;
    let ack = svc.record_vote(&id, b.trial_id, &b.listener_id, b.score)?;
    Ok((StatusCode::CREATED, Json(ack)).into_response())
}

async fn vote_log(State(svc): Svc, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let log = svc.vote_log(&id)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], log).into_response())
}

async fn summary(State(svc): Svc, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    Ok(Json(svc.summary(&id)?).into_response())
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("wav") => "audio/wav",
        Some("flac") => "audio/flac",
        Some("mp3") => "audio/mpeg",
        Some("ogg") => "audio/ogg",
        _ => "application/octet-stream",
    }
}

async fn audio(State(svc): Svc, UrlPath(path): UrlPath<String>) -> Response {
    let Some(rel) = safe_relative(&path) else {
        return StatusCode::NOT_FOUND.into_response();
    };
    let full = svc.audio_root().join(&rel);
    match tokio::fs::read(&full).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&full))], bytes).into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

pub fn router(svc: Arc<AbService>) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/next", get(next_trial))
        .route("/api/sessions/{id}/played", post(played))
        .route("/api/sessions/{id}/votes", post(vote).get(vote_log))
        .route("/api/sessions/{id}/summary", get(summary))
        .route("/audio/{*path}", get(audio))
        .with_state(svc)
}

/// Serve until the process is stopped.
pub async fn serve(addr: SocketAddr, data_dir: &Path, audio_root: &Path) -> std::io::Result<()> {
    let svc = AbService::open(data_dir, audio_root).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(svc))).await
}
