//! HTTP routes and the server-sent-event chat stream.

use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nbrag_core::retrieval::RetrievalError;
use tokio::sync::mpsc;
use tower_http::services::ServeDir;

use crate::engine::{Engine, EngineError, PreparedTurn};
use crate::session::SessionStore;
use crate::wire::{
    ChatEvent, ChatRequest, CreateSessionRequest, CreateSessionResponse, DoneEvent, ErrorBody,
    ErrorEvent, SourceRecord, SourcesEvent, TokenEvent,
};

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub sessions: Arc<SessionStore>,
    /// Emit the `sources` event before the first token instead of after the last.
    pub sources_first: bool,
}

impl AppState {
    pub fn new(engine: Engine, sessions: SessionStore) -> Self {
        Self {
            engine: Arc::new(engine),
            sessions: Arc::new(sessions),
            sources_first: false,
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, e.body_text())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::Retrieval(RetrievalError::Settings(_)) => StatusCode::BAD_REQUEST,
            EngineError::UnknownCompetition(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::BAD_GATEWAY,
        };
        ApiError::new(status, e.to_string())
    }
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/competitions", get(list_competitions))
        .route("/api/session", post(create_session))
        .route("/api/session/{session_id}", get(get_session))
        .route("/api/chat", post(chat))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn list_competitions(State(app): State<AppState>) -> Response {
    Json(app.engine.competitions()).into_response()
}

async fn create_session(
    State(app): State<AppState>,
    body: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    if !app.engine.has_competition(&req.competition_id) {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            format!("unknown competition `{}`", req.competition_id),
        ));
    }
    let session = app.sessions.create(&req.competition_id).await;
    let body = CreateSessionResponse {
        session_id: session.session_id,
        competition_id: session.competition_id,
    };
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn get_session(
    State(app): State<AppState>,
    Path(session_id): Path<String>,
) -> Result<Response, ApiError> {
    let handle = app
        .sessions
        .get(&session_id)
        .await
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session `{session_id}`")))?;
    let session = handle.lock().await.clone();
    Ok(Json(session).into_response())
}

fn sse_event(e: &ChatEvent) -> Event {
    Event::default().event(e.name()).data(e.data())
}

async fn chat(
    State(app): State<AppState>,
    body: Result<Json<ChatRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    if req.message.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "message must not be empty"));
    }
    req.settings
        .validate()
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let session = app.sessions.lock(&req.session_id).await.ok_or_else(|| {
        ApiError::new(StatusCode::NOT_FOUND, format!("unknown session `{}`", req.session_id))
    })?;

    // Retrieval may call a remote embedder; keep it off the async workers.
    let prepared: PreparedTurn = {
        let engine = app.engine.clone();
        let competition = session.competition_id.clone();
        let history = session.turns.clone();
        let message = req.message.clone();
        let settings = req.settings.clone();
        let mode = req.mode;
        tokio::task::spawn_blocking(move || engine.prepare(&competition, &history, &message, &settings, mode))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??
    };

    let (tx, mut rx) = mpsc::unbounded_channel::<ChatEvent>();
    let engine = app.engine.clone();
    let store = app.sessions.clone();
    let sources_first = app.sources_first;
    tokio::spawn(async move {
        let mut session = session;
        let sources = prepared.visible_sources().map(|s| {
            ChatEvent::Sources(SourcesEvent {
                sources: s.iter().map(SourceRecord::from).collect(),
            })
        });
        if sources_first {
            if let Some(ev) = &sources {
                let _ = tx.send(ev.clone());
            }
        }
        let token_tx = tx.clone();
        let generation = tokio::task::spawn_blocking(move || {
            let result = engine.generate(&prepared, &mut |fragment| {
                let _ = token_tx.send(ChatEvent::Token(TokenEvent {
                    text: fragment.to_string(),
                }));
            });
            (prepared, result)
        })
        .await;
        let (prepared, result) = match generation {
            Ok(r) => r,
            Err(e) => {
                let _ = tx.send(ChatEvent::Error(ErrorEvent { message: e.to_string() }));
                return;
            }
        };
        if !sources_first {
            if let Some(ev) = sources {
                let _ = tx.send(ev);
            }
        }
        match &result.error {
            Some(e) => {
                log::warn!("generation failed in session {}: {e}", session.session_id);
                let _ = tx.send(ChatEvent::Error(ErrorEvent { message: e.to_string() }));
            }
            None => {
                let max = store.max_turns();
                session.push_exchange(&prepared.prompt.current_user_text, &result.text, max);
                store.persist_with(&session).await;
            }
        }
        let _ = tx.send(ChatEvent::Done(DoneEvent {
            finish_reason: result.finish_reason,
        }));
    });

    let stream = futures::stream::poll_fn(move |cx| {
        rx.poll_recv(cx).map(|ev| ev.map(|e| Ok::<_, Infallible>(sse_event(&e))))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()).into_response())
}
