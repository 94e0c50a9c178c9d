//! HTTP routes.

use std::panic::AssertUnwindSafe;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use mhrag_core::agent::Event;
use mhrag_core::index::IndexStats;
use mhrag_core::ingest::{load_corpus, Block, CorpusFormat, SourceDocument};
use mhrag_core::pipeline::{IngestSummary, Pipeline, PipelineError};

use crate::query::{run_query, QueryError, QueryRequest, QueryResponse};
use crate::session::{LoggedEvent, Session, SessionEnvelope, SessionError, SessionStore};

const DEFAULT_WAIT_MS: u64 = 25_000;
const MAX_WAIT_MS: u64 = 60_000;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("missing or invalid bearer token")]
    Unauthorized,
    #[error("{0}")]
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Unauthorized => StatusCode::UNAUTHORIZED,
            ApiError::Internal(detail) => {
                tracing::error!(%detail, "request failed");
                return (
                    StatusCode::INTERNAL_SERVER_ERROR,
                    Json(json!({"error": "internal error"})),
                )
                    .into_response();
            }
        };
        (status, Json(json!({"error": self.to_string()}))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::BadRequest(r.body_text())
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Closed | SessionError::Busy | SessionError::Clarify(_) => {
                ApiError::Conflict(e.to_string())
            }
            SessionError::Storage { .. } => ApiError::Internal(e.to_string()),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Ingest(_) | PipelineError::Index(_) => {
                ApiError::BadRequest(e.to_string())
            }
            other => ApiError::Internal(other.to_string()),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Clone)]
pub struct AppState {
    pub pipeline: Pipeline,
    pub sessions: Arc<SessionStore>,
    /// Required on every route but `/healthz` when set.
    pub token: Option<String>,
}

impl AppState {
    pub fn new(pipeline: Pipeline, sessions: SessionStore) -> Self {
        Self {
            pipeline,
            sessions: Arc::new(sessions),
            token: None,
        }
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token.filter(|t| !t.is_empty());
        self
    }

    /// Session store in memory with the pipeline's budgets and timeout.
    pub fn in_memory(pipeline: Pipeline) -> Self {
        let agent = &pipeline.config.agent;
        let sessions = SessionStore::in_memory(
            agent.budgets,
            Duration::from_secs(agent.clarification_timeout_secs),
        );
        Self::new(pipeline, sessions)
    }
}

pub fn router(state: AppState) -> Router {
    let protected = Router::new()
        .route("/ingest", post(ingest))
        .route("/documents/{doc_id}", delete(remove_document))
        .route("/query", post(query))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(close_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/clarifications", post(clarify))
        .route_layer(middleware::from_fn_with_state(state.clone(), auth));
    Router::new()
        .route("/healthz", get(healthz))
        .merge(protected)
        .with_state(state)
}

async fn auth(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let given = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_str()) {
            return ApiError::Unauthorized.into_response();
        }
    }
    next.run(req).await
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}

#[derive(Debug, Serialize)]
struct Health {
    status: &'static str,
    profile: mhrag_core::config::Profile,
    index: IndexStats,
    sessions: usize,
}

async fn healthz(State(state): State<AppState>) -> Json<Health> {
    let index = state
        .pipeline
        .index
        .read()
        .unwrap_or_else(std::sync::PoisonError::into_inner)
        .stats();
    Json(Health {
        status: "ok",
        profile: state.pipeline.config.profile,
        index,
        sessions: state.sessions.len(),
    })
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum InlineDocument {
    Full(SourceDocument),
    Text {
        doc_id: String,
        text: String,
        #[serde(default)]
        title: Option<String>,
        #[serde(default)]
        metadata: std::collections::BTreeMap<String, String>,
    },
}

impl From<InlineDocument> for SourceDocument {
    fn from(d: InlineDocument) -> Self {
        match d {
            InlineDocument::Full(doc) => doc,
            InlineDocument::Text {
                doc_id,
                text,
                title,
                metadata,
            } => SourceDocument {
                title: title.unwrap_or_else(|| doc_id.clone()),
                doc_id,
                blocks: vec![Block::Text(text)],
                metadata,
            },
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestRequest {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<String>,
    #[serde(default)]
    pub documents: Vec<InlineDocument>,
}

async fn ingest(
    State(state): State<AppState>,
    body: Result<Json<IngestRequest>, JsonRejection>,
) -> ApiResult<IngestSummary> {
    let Json(req) = body?;
    if req.path.is_none() && req.documents.is_empty() {
        return Err(ApiError::BadRequest(
            "give a `path` or inline `documents`".into(),
        ));
    }
    let format: CorpusFormat = req
        .format
        .as_deref()
        .unwrap_or(&state.pipeline.config.corpus.format)
        .parse()
        .map_err(ApiError::BadRequest)?;
    let pipeline = state.pipeline.clone();
    blocking(move || {
        let mut docs: Vec<SourceDocument> = req.documents.into_iter().map(Into::into).collect();
        if let Some(p) = &req.path {
            docs.extend(load_corpus(p, format).map_err(|e| ApiError::BadRequest(e.to_string()))?);
        }
        Ok(Json(pipeline.ingest(&docs)?))
    })
    .await
}

#[derive(Debug, Serialize)]
struct Removed {
    doc_id: String,
    removed: usize,
}

async fn remove_document(
    State(state): State<AppState>,
    Path(doc_id): Path<String>,
) -> ApiResult<Removed> {
    let pipeline = state.pipeline.clone();
    blocking(move || {
        let removed = pipeline.remove_document(&doc_id);
        Ok(Json(Removed { doc_id, removed }))
    })
    .await
}

async fn query(
    State(state): State<AppState>,
    body: Result<Json<QueryRequest>, JsonRejection>,
) -> ApiResult<QueryResponse> {
    let Json(req) = body?;
    let pipeline = state.pipeline.clone();
    blocking(move || {
        run_query(&pipeline, &req)
            .map(Json)
            .map_err(|QueryError::Invalid(m)| ApiError::BadRequest(m))
    })
    .await
}

fn session(state: &AppState, id: &str) -> Result<Arc<Session>, ApiError> {
    state
        .sessions
        .get(id)
        .ok_or_else(|| ApiError::NotFound(format!("no session `{id}`")))
}

async fn create_session(State(state): State<AppState>) -> Result<Response, ApiError> {
    let s = state.sessions.create()?;
    Ok((StatusCode::CREATED, Json(s.envelope())).into_response())
}

async fn get_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<SessionEnvelope> {
    Ok(Json(session(&state, &id)?.envelope()))
}

async fn close_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<SessionEnvelope> {
    let s = session(&state, &id)?;
    s.close();
    Ok(Json(s.envelope()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageRequest {
    pub text: String,
}

#[derive(Debug, Serialize)]
struct Accepted {
    /// Cursor of the episode's first event.
    cursor: usize,
    session: SessionEnvelope,
}

async fn post_message(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<MessageRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let text = req.text.trim().to_string();
    if text.is_empty() {
        return Err(ApiError::BadRequest("text is empty".into()));
    }
    let s = session(&state, &id)?;
    let mut agent_state = s.begin_episode()?;
    let cursor = s.len();
    let agent = state.pipeline.agent(s.channel.clone());
    let budgets = state.sessions.budgets();
    let worker = s.clone();
    tokio::task::spawn_blocking(move || {
        let outcome = std::panic::catch_unwind(AssertUnwindSafe(|| {
            let observer = |_: usize, e: &Event| {
                worker.append(e.clone());
            };
            let r = agent.answer_query(&text, &mut agent_state, &observer);
            (r, agent_state)
        }));
        match outcome {
            Ok((r, st)) => {
                if let Err(e) = r {
                    tracing::warn!(session = %worker.id, error = %e, "episode rejected");
                }
                worker.end_episode(st)
            }
            Err(_) => {
                tracing::error!(session = %worker.id, "episode panicked");
                worker.abort_episode(budgets);
            }
        }
    });
    Ok((
        StatusCode::ACCEPTED,
        Json(Accepted {
            cursor,
            session: s.envelope(),
        }),
    )
        .into_response())
}

#[derive(Debug, Deserialize)]
pub struct EventsQuery {
    #[serde(default)]
    pub cursor: usize,
    #[serde(default)]
    pub wait_ms: Option<u64>,
    /// Include the agent's `thought` text in meta-plan events.
    #[serde(default)]
    pub thoughts: bool,
}

#[derive(Debug, Serialize)]
struct EventPage {
    session: SessionEnvelope,
    events: Vec<LoggedEvent>,
    next_cursor: usize,
}

async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> ApiResult<EventPage> {
    let s = session(&state, &id)?;
    if q.cursor > s.len() {
        return Err(ApiError::BadRequest(format!(
            "cursor {} is past the end of the stream ({})",
            q.cursor,
            s.len()
        )));
    }
    let wait = Duration::from_millis(q.wait_ms.unwrap_or(DEFAULT_WAIT_MS).min(MAX_WAIT_MS));
    if s.len() == q.cursor && !wait.is_zero() {
        s.wait_beyond(q.cursor, wait).await;
    }
    let mut events = s.events_from(q.cursor).unwrap_or_default();
    if !q.thoughts {
        for e in &mut events {
            if let Event::MetaPlan { plan, .. } = &mut e.event {
                plan.thought.clear();
            }
        }
    }
    Ok(Json(EventPage {
        session: s.envelope(),
        next_cursor: q.cursor + events.len(),
        events,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClarificationRequest {
    /// Request being answered; omitted means the pending one.
    #[serde(default)]
    pub id: Option<u64>,
    pub text: String,
}

#[derive(Debug, Serialize)]
struct Clarified {
    id: u64,
}

async fn clarify(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<ClarificationRequest>, JsonRejection>,
) -> ApiResult<Clarified> {
    let Json(req) = body?;
    if req.text.trim().is_empty() {
        return Err(ApiError::BadRequest("text is empty".into()));
    }
    let s = session(&state, &id)?;
    let id = s.clarify(req.id, req.text.trim())?;
    Ok(Json(Clarified { id }))
}

/// Serves until `shutdown` resolves, then closes every session and writes
/// the index snapshot.
pub async fn serve(
    state: AppState,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> anyhow::Result<()> {
    let app = router(state.clone());
    let sessions = state.sessions.clone();
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            shutdown.await;
            sessions.close_all();
        })
        .await?;
    let pipeline = state.pipeline.clone();
    let written = tokio::task::spawn_blocking(move || pipeline.persist_snapshot()).await??;
    if let Some(p) = written {
        tracing::info!(path = %p.display(), "index snapshot written");
    }
    Ok(())
}
