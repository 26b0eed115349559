//! HTTP + WebSocket service hosting live matches.
//!
//! - `POST /api/match` `{packet_id?, tick_ms?, questions?}` creates a session.
//! - `GET /api/match/:id` returns its scoreboard.
//! - `GET /api/match/:id/play` upgrades to a WebSocket carrying one JSON
//!   event per text frame in both directions.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use qb_core::session::{ClientEvent, JudgeConfig, MachineAgent, MatchSession, ServerEvent, SessionQuestion, SessionState};
use qb_core::simulate::ScoreRules;
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

pub const DEFAULT_TICK_MS: u64 = 400;

pub struct ServiceConfig {
    pub agent: Option<Arc<MachineAgent>>,
    pub judge: Arc<JudgeConfig>,
    pub questions: Vec<SessionQuestion>,
    /// Questions per packet; packet `p` is the `p`-th consecutive slice.
    pub packet_size: usize,
    pub tick_ms: u64,
    pub rules: ScoreRules,
}

struct Session {
    inner: Mutex<MatchSession>,
    tick_ms: u64,
}

#[derive(Clone)]
pub struct AppState {
    config: Arc<ServiceConfig>,
    sessions: Arc<std::sync::Mutex<HashMap<String, Arc<Session>>>>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        AppState {
            config: Arc::new(config),
            sessions: Arc::default(),
        }
    }

    fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.lock().expect("session map poisoned").get(id).cloned()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/match", post(create_match))
        .route("/api/match/:id", get(get_match))
        .route("/api/match/:id/play", get(play))
        .with_state(state)
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct CreateMatch {
    pub packet_id: Option<usize>,
    /// Milliseconds between revealed words; 0 means the client drives
    /// reveals with `{"type":"tick"}` frames.
    pub tick_ms: Option<u64>,
    /// Cap on the number of questions taken from the packet.
    pub questions: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub questions: usize,
}

#[derive(Debug, Serialize)]
struct ApiError {
    error: String,
}

fn api_error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ApiError { error: msg.into() })).into_response()
}

async fn create_match(State(state): State<AppState>, body: Option<Json<CreateMatch>>) -> Response {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let cfg = &state.config;
    let Some(agent) = cfg.agent.clone() else {
        return api_error(StatusCode::SERVICE_UNAVAILABLE, "no machine agent loaded");
    };
    let size = cfg.packet_size.max(1);
    let start = req.packet_id.unwrap_or(0).saturating_mul(size);
    let mut questions: Vec<SessionQuestion> = cfg.questions.iter().skip(start).take(size).cloned().collect();
    if let Some(n) = req.questions {
        questions.truncate(n);
    }
    if questions.is_empty() {
        return api_error(StatusCode::BAD_REQUEST, "match would have 0 questions");
    }
    let id = uuid::Uuid::new_v4().to_string();
    let n = questions.len();
    let session = match MatchSession::new(id.clone(), questions, agent, cfg.judge.clone(), cfg.rules) {
        Ok(s) => s,
        Err(e) => return api_error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let tick_ms = req.tick_ms.unwrap_or(cfg.tick_ms);
    state.sessions.lock().expect("session map poisoned").insert(
        id.clone(),
        Arc::new(Session {
            inner: Mutex::new(session),
            tick_ms,
        }),
    );
    tracing::info!(session = %id, questions = n, tick_ms, "match created");
    (StatusCode::CREATED, Json(Created { session_id: id, questions: n })).into_response()
}

async fn get_match(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match state.session(&id) {
        Some(s) => Json(s.inner.lock().await.scoreboard()).into_response(),
        None => api_error(StatusCode::NOT_FOUND, format!("no match {id}")),
    }
}

async fn play(State(state): State<AppState>, Path(id): Path<String>, ws: WebSocketUpgrade) -> Response {
    match state.session(&id) {
        Some(s) => ws.on_upgrade(move |socket| run_socket(socket, s)),
        None => api_error(StatusCode::NOT_FOUND, format!("no match {id}")),
    }
}

fn encode(events: &[ServerEvent]) -> Vec<Message> {
    events
        .iter()
        .map(|e| Message::Text(serde_json::to_string(e).expect("events serialize")))
        .collect()
}

/// One connection: timer ticks and client frames feed the session one at
/// a time, so events within a session are strictly ordered.
async fn run_socket(socket: WebSocket, session: Arc<Session>) {
    let (mut tx, mut rx) = socket.split();
    let mut timer = (session.tick_ms > 0).then(|| {
        let mut t = tokio::time::interval(Duration::from_millis(session.tick_ms));
        t.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        t
    });
    loop {
        let out = tokio::select! {
            _ = async { timer.as_mut().unwrap().tick().await }, if timer.is_some() => {
                let mut s = session.inner.lock().await;
                if s.state() == SessionState::Revealing {
                    s.step(&ClientEvent::Tick)
                } else {
                    Vec::new()
                }
            }
            frame = rx.next() => match frame {
                Some(Ok(Message::Text(text))) => match serde_json::from_str::<ClientEvent>(&text) {
                    Ok(ev) => session.inner.lock().await.step(&ev),
                    Err(e) => vec![ServerEvent::Error { message: format!("bad event: {e}") }],
                },
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => Vec::new(),
            },
        };
        let finished = out.iter().any(|e| matches!(e, ServerEvent::Finished { .. }));
        for msg in encode(&out) {
            if tx.send(msg).await.is_err() {
                return;
            }
        }
        if finished {
            let _ = tx.send(Message::Close(None)).await;
            break;
        }
    }
}
