//! `POST /link` and `GET /healthz`.

use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use i2cr_core::kg::KgSnapshot;
use i2cr_core::pipeline::{LinkError, LinkTrace, MentionSample, PipelineConfig};
use i2cr_core::Backends;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::Semaphore;

use crate::commands::link_payload;

pub struct AppState {
    pub kg: Arc<KgSnapshot>,
    pub backends: Backends,
    pub config: PipelineConfig,
    pub limit: Semaphore,
}

impl AppState {
    pub fn new(kg: KgSnapshot, backends: Backends, config: PipelineConfig, max_in_flight: usize) -> Self {
        Self {
            kg: Arc::new(kg),
            backends,
            config,
            limit: Semaphore::new(max_in_flight.max(1)),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkRequest {
    pub mention: String,
    #[serde(default)]
    pub context: String,
    #[serde(default)]
    pub image_b64: Option<String>,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub explain: bool,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<LinkTrace>,
}

fn error(status: StatusCode, message: impl Into<String>, trace: Option<LinkTrace>) -> Response {
    (
        status,
        Json(ErrorBody {
            error: message.into(),
            trace,
        }),
    )
        .into_response()
}

fn failure_status(err: &LinkError) -> StatusCode {
    match err.failure.backend() {
        Some(e) if e.is_unavailable() => StatusCode::SERVICE_UNAVAILABLE,
        Some(_) => StatusCode::BAD_GATEWAY,
        None => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn parse_request(body: &[u8]) -> Result<(MentionSample, usize, bool), String> {
    let req: LinkRequest = serde_json::from_slice(body).map_err(|e| e.to_string())?;
    if req.mention.trim().is_empty() {
        return Err("`mention` must be non-empty".into());
    }
    if req.top_k == Some(0) {
        return Err("`top_k` must be positive".into());
    }
    let mut sample = MentionSample::new(req.mention, req.context);
    if let Some(b64) = req.image_b64 {
        let image = BASE64
            .decode(b64.as_bytes())
            .map_err(|e| format!("`image_b64`: {e}"))?;
        sample = sample.with_image(image);
    }
    Ok((sample, req.top_k.unwrap_or(1), req.explain))
}

async fn link_handler(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let (sample, top_k, explain) = match parse_request(&body) {
        Ok(parsed) => parsed,
        Err(message) => return error(StatusCode::BAD_REQUEST, message, None),
    };
    let Ok(_permit) = state.limit.acquire().await else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "shutting down", None);
    };
    let worker = state.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        link_payload(&sample, &worker.kg, &worker.backends, &worker.config, top_k, explain)
    })
    .await;
    match outcome {
        Ok(Ok(payload)) => Json(payload).into_response(),
        Ok(Err(err)) => {
            tracing::warn!(error = %err, "link failed");
            let status = failure_status(&err);
            error(status, err.to_string(), Some(err.trace))
        }
        Err(join) => error(StatusCode::INTERNAL_SERVER_ERROR, join.to_string(), None),
    }
}

async fn healthz(State(state): State<Arc<AppState>>) -> Response {
    Json(json!({
        "status": "ok",
        "entities": state.kg.len(),
        "kg_digest": state.kg.source_digest(),
        "config_fingerprint": state.config.fingerprint(),
    }))
    .into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/link", post(link_handler))
        .route("/healthz", get(healthz))
        .with_state(state)
}

pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Resolves on Ctrl-C or, on Unix, SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}
