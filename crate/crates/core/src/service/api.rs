use std::collections::BTreeMap;
use std::sync::atomic::Ordering;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::cors::{Any, CorsLayer};

use crate::pattern::{to_json, SessionState};

use super::hub::{HubError, PlaybackRequest, SourceRequest};
use super::{AppState, ClockMode};

/// Fastest rate a live subscriber is sent frames at.
const LIVE_MAX_HZ: f64 = 30.0;

pub(super) fn router(state: AppState) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods(Any)
        .allow_headers(Any);
    Router::new()
        .route("/health", get(health))
        .route("/session", get(session))
        .route("/session/source", post(set_source))
        .route("/session/sync", post(sync))
        .route("/session/step", post(step))
        .route("/session/record/start", post(record_start))
        .route("/session/record/stop", post(record_stop))
        .route("/patterns", get(list_patterns))
        .route("/patterns/{id}", get(get_pattern).delete(delete_pattern))
        .route("/playback", get(playback_status))
        .route("/playback/start", post(playback_start))
        .route("/playback/stop", post(playback_stop))
        .route("/live", get(live))
        .layer(cors)
        .with_state(state)
}

struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    state: Option<SessionState>,
}

impl ApiError {
    fn from_hub(e: HubError, state: SessionState) -> Self {
        let (status, code) = match &e {
            HubError::Conflict(_) => (StatusCode::CONFLICT, "state_error"),
            HubError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            HubError::Invalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_params"),
            HubError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self {
            status,
            code,
            message: e.to_string(),
            state: Some(state),
        }
    }

    fn bad_body(e: JsonRejection) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            code: "invalid_params",
            message: e.body_text(),
            state: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "error": self.code,
            "message": self.message,
            "state": self.state,
        });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(v)| v).map_err(ApiError::bad_body)
}

/// Run `f` against the hub, mapping errors with the state they were seen in.
fn with_hub<R>(
    state: &AppState,
    f: impl FnOnce(&mut super::Hub) -> Result<R, HubError>,
) -> Result<R, ApiError> {
    let mut hub = state.hub.lock().unwrap();
    f(&mut hub).map_err(|e| ApiError::from_hub(e, hub.state()))
}

fn snapshot(state: &AppState) -> Response {
    let hub = state.hub.lock().unwrap();
    Json(hub.snapshot(state.subscribers())).into_response()
}

async fn blocking<R: Send + 'static>(
    state: AppState,
    f: impl FnOnce(&AppState) -> Result<R, ApiError> + Send + 'static,
) -> Result<R, ApiError> {
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: e.to_string(),
            state: None,
        })?
}

async fn health(State(state): State<AppState>) -> Response {
    Json(json!({
        "name": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "uptime_s": state.started.elapsed().as_secs_f64(),
    }))
    .into_response()
}

async fn session(State(state): State<AppState>) -> Response {
    snapshot(&state)
}

async fn set_source(
    State(state): State<AppState>,
    payload: Result<Json<SourceRequest>, JsonRejection>,
) -> ApiResult {
    let req = body(payload)?;
    let st = state.clone();
    blocking(state, move |s| with_hub(s, |hub| hub.set_source(&req))).await?;
    Ok(snapshot(&st))
}

async fn sync(State(state): State<AppState>) -> ApiResult {
    let mode = {
        let mut hub = state.hub.lock().unwrap();
        hub.begin_sync()
            .map_err(|e| ApiError::from_hub(e, hub.state()))?;
        hub.mode()
    };
    if mode == ClockMode::RealTime {
        for _ in 0..400 {
            if state.hub.lock().unwrap().state() != SessionState::Syncing {
                break;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
    }
    Ok(snapshot(&state))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepRequest {
    frames: u32,
}

async fn step(
    State(state): State<AppState>,
    payload: Result<Json<StepRequest>, JsonRejection>,
) -> ApiResult {
    let req = body(payload)?;
    let st = state.clone();
    blocking(state, move |s| {
        with_hub(s, |hub| {
            if hub.mode() != ClockMode::Manual {
                return Err(HubError::Conflict(
                    "frames advance on their own under the real-time clock".into(),
                ));
            }
            for _ in 0..req.frames {
                if !hub.step() {
                    break;
                }
            }
            Ok(())
        })
    })
    .await?;
    Ok(snapshot(&st))
}

async fn record_start(State(state): State<AppState>) -> ApiResult {
    with_hub(&state, |hub| hub.start_recording())?;
    Ok(snapshot(&state))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StopRequest {
    name: String,
    #[serde(default)]
    annotations: BTreeMap<String, String>,
}

async fn record_stop(
    State(state): State<AppState>,
    payload: Result<Json<StopRequest>, JsonRejection>,
) -> ApiResult {
    let req = body(payload)?;
    let entry = blocking(state, move |s| {
        with_hub(s, |hub| hub.stop_recording(&req.name, req.annotations))
    })
    .await?;
    Ok(Json(json!({ "id": entry.id, "entry": entry })).into_response())
}

async fn list_patterns(State(state): State<AppState>) -> ApiResult {
    let list = with_hub(&state, |hub| Ok(hub.patterns()))?;
    Ok(Json(list).into_response())
}

async fn get_pattern(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let rec = with_hub(&state, |hub| hub.pattern(&id))?;
    let text = to_json(&rec).map_err(|e| ApiError::from_hub(e.into(), SessionState::Idle))?;
    let mut resp = text.into_response();
    resp.headers_mut().insert(
        axum::http::header::CONTENT_TYPE,
        HeaderValue::from_static("application/json"),
    );
    Ok(resp)
}

async fn delete_pattern(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    with_hub(&state, |hub| hub.delete_pattern(&id))?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn playback_status(State(state): State<AppState>) -> ApiResult {
    let status = with_hub(&state, |hub| Ok(hub.playback_status()))?;
    Ok(Json(status).into_response())
}

async fn playback_start(
    State(state): State<AppState>,
    payload: Result<Json<PlaybackRequest>, JsonRejection>,
) -> ApiResult {
    let req = body(payload)?;
    let job_id = blocking(state, move |s| with_hub(s, |hub| hub.start_playback(&req))).await?;
    Ok(Json(json!({ "job_id": job_id })).into_response())
}

async fn playback_stop(State(state): State<AppState>) -> ApiResult {
    let status = blocking(state, move |s| {
        let handle = with_hub(s, |hub| hub.stop_playback())?;
        if let Some(h) = handle {
            let _ = h.join();
        }
        with_hub(s, |hub| Ok(hub.playback_status()))
    })
    .await?;
    Ok(Json(status).into_response())
}

async fn live(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| live_socket(socket, state))
}

async fn live_socket(mut socket: WebSocket, state: AppState) {
    let mut rx = state.live.clone();
    rx.mark_unchanged();
    state.subscribers.fetch_add(1, Ordering::AcqRel);
    let min_gap = Duration::from_secs_f64(1.0 / LIVE_MAX_HZ);
    let mut last_sent: Option<tokio::time::Instant> = None;
    loop {
        tokio::select! {
            changed = rx.changed() => {
                if changed.is_err() {
                    break;
                }
                if let Some(t) = last_sent {
                    tokio::time::sleep_until(t + min_gap).await;
                }
                let frame = rx.borrow_and_update().clone();
                let Some(frame) = frame else { continue };
                let text = serde_json::to_string(&frame).expect("live frame serializes");
                if socket.send(Message::Text(text.into())).await.is_err() {
                    break;
                }
                last_sent = Some(tokio::time::Instant::now());
            }
            msg = socket.recv() => match msg {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    state.subscribers.fetch_sub(1, Ordering::AcqRel);
}
