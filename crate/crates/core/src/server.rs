//! HTTP and WebSocket API over a [`SessionService`].
//!
//! | Method | Path | Body | Response |
//! |---|---|---|---|
//! | GET | `/health` | | `{"status":"ok"}` |
//! | POST | `/sessions` | `{"topic"}` | session (201) |
//! | POST | `/sessions/{id}/messages` | `{"text"}` | `{"mentor_message","decision"}` |
//! | GET | `/sessions/{id}` | | session |
//! | POST | `/sessions/{id}/report` | four report fields | session |
//! | GET | `/sessions/{id}/events?after=N` | | event array |
//! | GET (WS) | `/sessions/{id}/stream?after=N` | | one event per text frame |
//!
//! Errors are `{"error": kind, "message": text}` with an optional
//! `"fields"` list naming empty report sections.

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::broadcast;

use crate::controller::ControllerDecision;
use crate::mentor::MentorMessage;
use crate::session::{ReportDraft, SessionError, SessionEvent, SessionService};

pub const DEFAULT_PORT: u16 = 8080;
pub const ENV_PORT: &str = "MENTIGO_PORT";
pub const ENV_KB_PATH: &str = "MENTIGO_KB_PATH";
pub const TICK_INTERVAL: Duration = Duration::from_secs(1);

#[derive(Debug, Deserialize)]
pub struct CreateSessionBody {
    #[serde(alias = "task_topic")]
    pub topic: String,
}

#[derive(Debug, Deserialize)]
pub struct PostMessageBody {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RoundResponse {
    pub mentor_message: MentorMessage,
    pub decision: ControllerDecision,
}

#[derive(Debug, Default, Deserialize)]
pub struct AfterQuery {
    #[serde(default)]
    pub after: u64,
}

pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({"error": kind, "message": message.into()}),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, kind) = match &e {
            SessionError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            SessionError::NotActive { .. } => (StatusCode::CONFLICT, "not_active"),
            SessionError::WrongStage(_) => (StatusCode::CONFLICT, "wrong_stage"),
            SessionError::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            SessionError::CorruptLog { .. } | SessionError::Io(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        ApiError::new(status, kind, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Run a blocking service call off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> Result<T, SessionError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(ApiError::from)
}

pub fn router(svc: Arc<SessionService>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/:id", get(get_session))
        .route("/sessions/:id/messages", post(post_message))
        .route("/sessions/:id/report", post(submit_report))
        .route("/sessions/:id/events", get(list_events))
        .route("/sessions/:id/stream", get(stream))
        .with_state(svc)
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

async fn create_session(
    State(svc): State<Arc<SessionService>>,
    Json(body): Json<CreateSessionBody>,
) -> ApiResult<Response> {
    let session = blocking(move || svc.create_session(&body.topic)).await?;
    Ok((StatusCode::CREATED, Json(session)).into_response())
}

async fn get_session(
    State(svc): State<Arc<SessionService>>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let session = blocking(move || svc.get(&id)).await?;
    Ok(Json(session).into_response())
}

async fn post_message(
    State(svc): State<Arc<SessionService>>,
    Path(id): Path<String>,
    Json(body): Json<PostMessageBody>,
) -> ApiResult<Json<RoundResponse>> {
    let (mentor_message, decision) =
        blocking(move || svc.post_student_message(&id, &body.text)).await?;
    Ok(Json(RoundResponse {
        mentor_message,
        decision,
    }))
}

async fn submit_report(
    State(svc): State<Arc<SessionService>>,
    Path(id): Path<String>,
    Json(draft): Json<ReportDraft>,
) -> ApiResult<Response> {
    let empty = draft.empty_fields();
    match blocking(move || svc.submit_report(&id, draft)).await {
        Ok(session) => Ok(Json(session).into_response()),
        Err(mut e) => {
            if e.status == StatusCode::UNPROCESSABLE_ENTITY {
                e.body["fields"] = json!(empty);
            }
            Err(e)
        }
    }
}

async fn list_events(
    State(svc): State<Arc<SessionService>>,
    Path(id): Path<String>,
    Query(q): Query<AfterQuery>,
) -> ApiResult<Json<Vec<SessionEvent>>> {
    Ok(Json(blocking(move || svc.events(&id, q.after)).await?))
}

async fn stream(
    State(svc): State<Arc<SessionService>>,
    Path(id): Path<String>,
    Query(q): Query<AfterQuery>,
    ws: WebSocketUpgrade,
) -> ApiResult<Response> {
    let (svc2, id2) = (svc.clone(), id.clone());
    let (backlog, rx) = blocking(move || svc2.subscribe(&id2, q.after)).await?;
    Ok(ws.on_upgrade(move |socket| pump(socket, svc, id, q.after, backlog, rx)))
}

/// Send the backlog, then live events, never repeating a seq. A lagging
/// receiver catches up from the stored log.
async fn pump(
    mut socket: WebSocket,
    svc: Arc<SessionService>,
    id: String,
    after: u64,
    backlog: Vec<SessionEvent>,
    mut rx: broadcast::Receiver<SessionEvent>,
) {
    let mut last = after;
    for ev in backlog {
        if send(&mut socket, &ev).await.is_err() {
            return;
        }
        last = ev.seq;
    }
    loop {
        tokio::select! {
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
            next = rx.recv() => {
                let batch = match next {
                    Ok(ev) => vec![ev],
                    Err(broadcast::error::RecvError::Lagged(_)) => {
                        let (svc, id) = (svc.clone(), id.clone());
                        match blocking(move || svc.events(&id, last)).await {
                            Ok(evs) => evs,
                            Err(_) => return,
                        }
                    }
                    Err(broadcast::error::RecvError::Closed) => return,
                };
                for ev in batch {
                    if ev.seq <= last {
                        continue;
                    }
                    if send(&mut socket, &ev).await.is_err() {
                        return;
                    }
                    last = ev.seq;
                }
            }
        }
    }
}

async fn send(socket: &mut WebSocket, ev: &SessionEvent) -> Result<(), axum::Error> {
    socket.send(Message::Text(ev.to_line())).await
}

/// Tick every session once per `interval` until the task is dropped.
pub fn spawn_ticker(svc: Arc<SessionService>, interval: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut timer = tokio::time::interval(interval);
        timer.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        loop {
            timer.tick().await;
            let svc = svc.clone();
            if let Ok(nudges) = tokio::task::spawn_blocking(move || svc.tick_all()).await {
                for (id, _) in nudges {
                    tracing::debug!(session = %id, "quiet nudge sent");
                }
            }
        }
    })
}

/// Serve `svc` on `listener` with a background ticker until `shutdown`
/// resolves.
pub async fn serve(
    listener: TcpListener,
    svc: Arc<SessionService>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let ticker = spawn_ticker(svc.clone(), TICK_INTERVAL);
    let result = axum::serve(listener, router(svc))
        .with_graceful_shutdown(shutdown)
        .await;
    ticker.abort();
    result
}
