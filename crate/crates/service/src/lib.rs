//! HTTP completion service.
//!
//! `POST /v1/complete` answers a [`CompletionRequest`]; `GET /v1/health`
//! reports the loaded checkpoint. The model lives in a [`ModelSlot`] whose
//! contents are replaced wholesale, so a request sees either the old or the
//! new model, never a mix.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ccag::complete::{Completer, CompletionRequest};
use ccag::vocab::VocabHashes;
use ccag::Error;
use serde::Serialize;
use tower_http::cors::{AllowOrigin, CorsLayer};

/// Inference runs in double precision regardless of the stored dtype.
pub type Model = Completer<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadOutcome {
    Loaded,
    /// The file hashes to the model already being served.
    Unchanged,
}

/// The currently served model.
#[derive(Debug, Default)]
pub struct ModelSlot {
    current: RwLock<Option<Arc<Model>>>,
}

impl ModelSlot {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self) -> Option<Arc<Model>> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn set(&self, model: Model) {
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(model));
    }

    /// Loads and verifies a checkpoint, then swaps it in. On any error the
    /// previous model stays in place.
    pub fn load(&self, path: &Path) -> ccag::Result<LoadOutcome> {
        let model = Model::load(path)?;
        if self.get().is_some_and(|m| m.weights_sha256() == model.weights_sha256()) {
            return Ok(LoadOutcome::Unchanged);
        }
        self.set(model);
        Ok(LoadOutcome::Loaded)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Origins allowed to call the API from a browser. Empty disables CORS.
    pub cors_origins: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub checkpoint: Option<String>,
    pub vocab_hashes: Option<VocabHashes>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: message.into() })).into_response()
}

pub fn router(slot: Arc<ModelSlot>, config: &ServiceConfig) -> Result<Router, String> {
    let router = Router::new()
        .route("/v1/complete", post(complete))
        .route("/v1/health", get(health))
        .with_state(slot);
    if config.cors_origins.is_empty() {
        return Ok(router);
    }
    let origins = config
        .cors_origins
        .iter()
        .map(|o| HeaderValue::from_str(o).map_err(|_| format!("invalid CORS origin `{o}`")))
        .collect::<Result<Vec<_>, _>>()?;
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::list(origins))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE]);
    Ok(router.layer(cors))
}

async fn complete(
    State(slot): State<Arc<ModelSlot>>,
    body: Result<Json<CompletionRequest>, JsonRejection>,
) -> Response {
    let Json(request) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    let Some(model) = slot.get() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "no model loaded");
    };
    match model.complete(&request) {
        Ok(response) => Json(response).into_response(),
        Err(e @ (Error::InvalidPrefix(_) | Error::UnknownType(_))) => {
            error(StatusCode::BAD_REQUEST, e.to_string())
        }
        Err(e) => {
            tracing::error!("completion failed: {e}");
            error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
        }
    }
}

async fn health(State(slot): State<Arc<ModelSlot>>) -> Response {
    match slot.get() {
        Some(m) => Json(Health {
            status: "ok",
            checkpoint: Some(m.info().checkpoint.clone()),
            vocab_hashes: Some(m.checkpoint().vocab.hashes()),
        })
        .into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(Health { status: "unavailable", checkpoint: None, vocab_hashes: None }),
        )
            .into_response(),
    }
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    addr: SocketAddr,
    app: Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
