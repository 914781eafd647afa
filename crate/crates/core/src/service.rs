//! Read-only HTTP/JSON inference service.
//!
//! | route            | body                         | reply                         |
//! |------------------|------------------------------|-------------------------------|
//! | `GET /health`    |                              | status and model shape        |
//! | `GET /concepts`  |                              | vocabulary document + columns |
//! | `POST /predict`  | `{embedding}`                | `{c, l, predicted, ties}`     |
//! | `POST /intervene`| `{embedding, edits}`         | `{before, after}`             |
//! | `GET /ui/*`      |                              | static files, when configured |
//!
//! Every reply carries the `x-supcbm-schema` header. Requests may send it
//! too; a different value is rejected.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Component, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointManifest, Model};
use crate::error::{Error, Result};
use crate::eval::{intervene, predict, Edit};
use crate::vocab::VocabBundle;

pub const SCHEMA_HEADER: &str = "x-supcbm-schema";
pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictRequest {
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterveneRequest {
    pub embedding: Vec<f64>,
    #[serde(default)]
    pub edits: BTreeMap<usize, Edit>,
}

struct Ready {
    model: Model,
    concepts_doc: serde_json::Value,
}

/// Shared, immutable service state.
pub struct ServiceState {
    inner: std::result::Result<Ready, String>,
    ui_dir: Option<PathBuf>,
}

impl ServiceState {
    pub fn new(model: Model, bundle: VocabBundle) -> Result<Self> {
        let dyn_model = model.as_dyn();
        if dyn_model.num_classes() != bundle.vocab.num_classes() {
            return Err(Error::shape(bundle.vocab.num_classes(), dyn_model.num_classes()));
        }
        let mut concepts_doc: serde_json::Value =
            serde_json::from_str(&bundle.to_json()).expect("vocabulary document is JSON");
        let columns: Vec<&[usize]> = (0..bundle.matrix.num_classes())
            .map(|j| bundle.matrix.concepts_of(j))
            .collect();
        concepts_doc["columns"] = serde_json::json!(columns);
        concepts_doc["fingerprint"] = bundle.fingerprint().into();
        Ok(Self {
            inner: Ok(Ready {
                model,
                concepts_doc,
            }),
            ui_dir: None,
        })
    }

    /// A state that answers every model route with 409 Conflict.
    pub fn conflict(reason: impl Into<String>) -> Self {
        Self {
            inner: Err(reason.into()),
            ui_dir: None,
        }
    }

    /// Loads a checkpoint for serving. A vocabulary whose fingerprint differs
    /// from the one recorded in the checkpoint yields a conflict state rather
    /// than an error.
    pub fn load(checkpoint_path: &std::path::Path, bundle: VocabBundle) -> Result<Self> {
        let manifest: CheckpointManifest = checkpoint::read_manifest(checkpoint_path)?;
        let actual = bundle.fingerprint();
        if let Some(expected) = &manifest.vocab_sha256 {
            if expected != &actual {
                return Ok(Self::conflict(format!(
                    "checkpoint expects vocabulary {expected}, service was given {actual}"
                )));
            }
        }
        let model = checkpoint::load(checkpoint_path, Some(&bundle))?;
        Self::new(model, bundle)
    }

    pub fn with_ui_dir(mut self, dir: Option<PathBuf>) -> Self {
        self.ui_dir = dir;
        self
    }

    pub fn is_conflict(&self) -> bool {
        self.inner.is_err()
    }
}

type Shared = Arc<ServiceState>;

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::ShapeMismatch { .. } | Error::UnknownConcept { .. } | Error::Validation(_) => {
                StatusCode::BAD_REQUEST
            }
            Error::ChecksumMismatch(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn ready(state: &ServiceState) -> std::result::Result<&Ready, ApiError> {
    state
        .inner
        .as_ref()
        .map_err(|reason| ApiError(StatusCode::CONFLICT, reason.clone()))
}

fn check_schema(headers: &HeaderMap) -> std::result::Result<(), ApiError> {
    match headers.get(SCHEMA_HEADER) {
        Some(v) if v.as_bytes() != SCHEMA_VERSION.as_bytes() => Err(ApiError(
            StatusCode::BAD_REQUEST,
            format!("unsupported schema version {v:?}, this service speaks {SCHEMA_VERSION}"),
        )),
        _ => Ok(()),
    }
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> std::result::Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")))
}

fn check_finite(x: &[f64]) -> std::result::Result<(), ApiError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ApiError(StatusCode::BAD_REQUEST, "embedding has non-finite values".into()))
    }
}

async fn health(State(state): State<Shared>) -> Response {
    match &state.inner {
        Ok(r) => {
            let m = r.model.as_dyn();
            Json(serde_json::json!({
                "status": "ok",
                "model": m.tag(),
                "d": m.input_dim(),
                "M": m.num_units(),
                "L": m.num_classes(),
            }))
            .into_response()
        }
        Err(reason) => (
            StatusCode::CONFLICT,
            Json(serde_json::json!({ "status": "checksum_mismatch", "error": reason })),
        )
            .into_response(),
    }
}

async fn concepts(State(state): State<Shared>) -> std::result::Result<Response, ApiError> {
    Ok(Json(ready(&state)?.concepts_doc.clone()).into_response())
}

async fn predict_route(
    State(state): State<Shared>,
    headers: HeaderMap,
    body: Bytes,
) -> std::result::Result<Response, ApiError> {
    check_schema(&headers)?;
    let r = ready(&state)?;
    let req: PredictRequest = parse_body(&body)?;
    check_finite(&req.embedding)?;
    Ok(Json(predict(r.model.as_dyn(), &req.embedding)?).into_response())
}

async fn intervene_route(
    State(state): State<Shared>,
    headers: HeaderMap,
    body: Bytes,
) -> std::result::Result<Response, ApiError> {
    check_schema(&headers)?;
    let r = ready(&state)?;
    let req: InterveneRequest = parse_body(&body)?;
    check_finite(&req.embedding)?;
    Ok(Json(intervene(r.model.as_dyn(), &req.embedding, &req.edits)?).into_response())
}

async fn ui_file(
    State(state): State<Shared>,
    path: Option<UrlPath<String>>,
) -> std::result::Result<Response, ApiError> {
    let dir = state
        .ui_dir
        .as_ref()
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, "no UI bundle configured".into()))?;
    let rel = path.map(|p| p.0).unwrap_or_default();
    let rel = if rel.is_empty() { "index.html".to_string() } else { rel };
    let rel_path = PathBuf::from(&rel);
    if rel_path.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(ApiError(StatusCode::BAD_REQUEST, "invalid path".into()));
    }
    let full = dir.join(rel_path);
    let bytes = tokio::fs::read(&full)
        .await
        .map_err(|_| ApiError(StatusCode::NOT_FOUND, format!("{rel} not found")))?;
    let mime = match full.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") | Some("mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

async fn stamp_schema(mut response: Response) -> Response {
    response
        .headers_mut()
        .insert(SCHEMA_HEADER, HeaderValue::from_static(SCHEMA_VERSION));
    response
}

pub fn router(state: ServiceState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/concepts", get(concepts))
        .route("/predict", post(predict_route))
        .route("/intervene", post(intervene_route))
        .route("/ui", get(ui_file))
        .route("/ui/", get(ui_file))
        .route("/ui/{*path}", get(ui_file))
        .layer(axum::middleware::map_response(stamp_schema))
        .with_state(Arc::new(state))
}

/// Serves until Ctrl-C or SIGTERM.
pub async fn serve(addr: SocketAddr, state: ServiceState) -> std::io::Result<()> {
    if let Err(reason) = &state.inner {
        log::error!("serving in conflict mode: {reason}");
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown_signal())
        .await
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        if let Ok(mut s) =
            tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate())
        {
            s.recv().await;
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    log::info!("shutting down");
}
