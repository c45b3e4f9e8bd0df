//! JSON HTTP API over the pipeline and the session store.

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};

use crate::transcript::{parse_transcript, SpeakerAliases, TranscriptFormat};

use super::session::{EditAction, EditEvent, ExportFormat, SessionHighlight, SessionState, SummarySession};
use super::store::{check_id, modify_session, SessionStore};
use super::{Pipeline, ServiceError, Stage};

#[derive(Clone)]
pub struct AppState {
    pub pipeline: Arc<Pipeline>,
    pub store: Arc<dyn SessionStore>,
    pub api_token: Option<String>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self.code.as_str() {
            "NOT_FOUND" | "UNKNOWN_HIGHLIGHT" => StatusCode::NOT_FOUND,
            "SESSION_FINALIZED" | "VERSION_CONFLICT" => StatusCode::CONFLICT,
            "UNAUTHORIZED" => StatusCode::UNAUTHORIZED,
            "INVALID_REQUEST" | "INVALID_ID" | "INVALID_EVENT" | "INVALID_TRANSCRIPT" => StatusCode::BAD_REQUEST,
            "SEGMENTATION_FAILED" => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(self)).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ServiceError {
    ServiceError::new("INVALID_REQUEST", Stage::Request, msg)
}

fn body<T>(r: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    r.map(|Json(v)| v).map_err(|e| bad_request(e.body_text()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/transcripts", post(ingest_transcript))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/events", post(post_event))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/sessions/{id}/export", get(export))
        .route_layer(middleware::from_fn_with_state(state.clone(), auth))
        .with_state(state)
}

async fn auth(State(state): State<AppState>, headers: HeaderMap, req: Request, next: Next) -> Response {
    if let Some(token) = &state.api_token {
        let given = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()).and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_str()) {
            return ServiceError::new("UNAUTHORIZED", Stage::Request, "missing or wrong bearer token").into_response();
        }
    }
    next.run(req).await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::new("INTERNAL", Stage::Request, e.to_string()))?
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IngestResponse {
    pub transcript_id: String,
    pub num_turns: usize,
}

async fn ingest_transcript(
    State(st): State<AppState>,
    raw: Result<Json<serde_json::Value>, JsonRejection>,
) -> Result<(StatusCode, Json<IngestResponse>), ServiceError> {
    let raw = body(raw)?;
    let bytes = serde_json::to_vec(&raw).expect("value serializes");
    let mut t = parse_transcript(&bytes, TranscriptFormat::JsonTurns, &SpeakerAliases::default())
        .map_err(|e| ServiceError::new("INVALID_TRANSCRIPT", Stage::Ingest, e.to_string()))?;
    if t.id.is_empty() {
        t.id = uuid::Uuid::new_v4().to_string();
    }
    check_id(&t.id)?;
    let resp = IngestResponse { transcript_id: t.id.clone(), num_turns: t.len() };
    let store = st.store.clone();
    blocking(move || store.put_transcript(&t)).await?;
    Ok((StatusCode::CREATED, Json(resp)))
}

/// Session as returned by the API; hidden highlights are left out unless
/// requested.
#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub transcript_id: String,
    pub state: SessionState,
    pub version: u64,
    pub transcript: crate::transcript::TranscriptRecord,
    pub segments: Vec<crate::transcript::Segment>,
    pub highlights: Vec<SessionHighlight>,
    pub hidden_count: usize,
    pub edit_log: Vec<EditEvent>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SessionView {
    pub fn new(s: &SummarySession, include_hidden: bool) -> Self {
        let highlights: Vec<SessionHighlight> = s.listed(include_hidden).into_iter().cloned().collect();
        Self {
            session_id: s.session_id.clone(),
            transcript_id: s.transcript_id.clone(),
            state: s.state,
            version: s.version,
            transcript: s.transcript.clone(),
            segments: s.segments.clone(),
            hidden_count: s.highlights.len() - highlights.len(),
            highlights,
            edit_log: s.edit_log.clone(),
            warnings: s.warnings.clone(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct CreateSession {
    transcript_id: String,
}

async fn create_session(
    State(st): State<AppState>,
    req: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), ServiceError> {
    let req = body(req)?;
    let session = blocking(move || {
        let t = st.store.get_transcript(&req.transcript_id)?;
        let mut s = super::summarize_call(&t, &st.pipeline)?;
        st.store.create_session(&mut s)?;
        Ok(s)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(SessionView::new(&session, false))))
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    #[serde(default)]
    include_hidden: bool,
}

async fn get_session(
    State(st): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<ListQuery>, QueryRejection>,
) -> Result<Json<SessionView>, ServiceError> {
    let Query(q) = q.map_err(|e| bad_request(e.body_text()))?;
    let s = blocking(move || st.store.get_session(&id)).await?;
    Ok(Json(SessionView::new(&s, q.include_hidden)))
}

#[derive(Debug, Deserialize)]
struct EventRequest {
    highlight_id: String,
    action: EditAction,
    #[serde(default)]
    new_text: Option<String>,
    #[serde(default)]
    actor: Option<String>,
    /// When set, the event is refused if the session has moved on.
    #[serde(default)]
    expected_version: Option<u64>,
}

async fn post_event(
    State(st): State<AppState>,
    Path(id): Path<String>,
    req: Result<Json<EventRequest>, JsonRejection>,
) -> Result<Json<SessionView>, ServiceError> {
    let req = body(req)?;
    let (_, s) = blocking(move || {
        modify_session(st.store.as_ref(), &id, |s| {
            if let Some(v) = req.expected_version {
                if v != s.version {
                    return Err(ServiceError::new(
                        "VERSION_CONFLICT",
                        Stage::Session,
                        format!("session is at version {}, client saw {v}", s.version),
                    ));
                }
            }
            s.record_edit(EditEvent {
                highlight_id: req.highlight_id.clone(),
                action: req.action,
                new_text: req.new_text.clone(),
                actor: req.actor.clone().unwrap_or_else(|| "anonymous".into()),
                timestamp: Utc::now(),
            })
        })
    })
    .await?;
    Ok(Json(SessionView::new(&s, false)))
}

async fn finalize(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ServiceError> {
    let (_, s) = blocking(move || modify_session(st.store.as_ref(), &id, |s| s.finalize(Utc::now()))).await?;
    Ok(Json(SessionView::new(&s, false)))
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    #[serde(default)]
    format: Option<String>,
}

async fn export(
    State(st): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<ExportQuery>, QueryRejection>,
) -> Result<Response, ServiceError> {
    let Query(q) = q.map_err(|e| bad_request(e.body_text()))?;
    let format: ExportFormat = q.format.as_deref().unwrap_or("json").parse().map_err(bad_request)?;
    let s = blocking(move || st.store.get_session(&id)).await?;
    let content_type = match format {
        ExportFormat::Json => "application/json",
        ExportFormat::Markdown => "text/markdown; charset=utf-8",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], s.export(format)).into_response())
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: AppState, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}
