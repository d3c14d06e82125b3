//! HTTP reward service over one immutable index.
//!
//! `POST /score` scores raw model output text exactly as the training loop
//! does, `POST /retrieve` exposes the index and `GET /healthz` reports readiness.

use std::collections::BTreeSet;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use convsearch_core::data::Turn;
use convsearch_core::retrieval::{IndexFile, RankedList, Retriever};
use convsearch_core::reward::{RewardConfig, RewardVariant};
use convsearch_core::scoring::score_output;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Sparse,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    /// Conversation so far. Informational: the score depends only on `output`.
    #[serde(default)]
    pub context: Vec<Turn>,
    #[serde(default)]
    pub query: String,
    /// Raw model output, `<think>..</think>` then `<rewrite>..</rewrite>`.
    pub output: String,
    /// Relevant passage ids for this turn.
    pub gold_ids: BTreeSet<String>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub depth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub format_ok: bool,
    pub rank: Option<usize>,
    pub reward: f64,
    pub variant: RewardVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_error: Option<String>,
    /// Wall time spent scoring; the only field that varies between identical requests.
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieveRequest {
    pub query: String,
    pub k: usize,
    #[serde(default)]
    pub mode: Mode,
}

pub struct ServiceState {
    index: OnceLock<Arc<IndexFile>>,
    fingerprint: OnceLock<String>,
    pub reward: RewardConfig,
    pub default_depth: usize,
}

impl ServiceState {
    /// State with no index yet; every scoring endpoint answers 503 until [`ServiceState::install`].
    pub fn new(reward: RewardConfig, default_depth: usize) -> Self {
        ServiceState {
            index: OnceLock::new(),
            fingerprint: OnceLock::new(),
            reward,
            default_depth,
        }
    }

    /// Installs the index. Later calls are ignored.
    pub fn install(&self, index: IndexFile) {
        let fp = index.fingerprint();
        if self.index.set(Arc::new(index)).is_ok() {
            let _ = self.fingerprint.set(fp);
        }
    }

    pub fn index(&self) -> Option<&Arc<IndexFile>> {
        self.index.get()
    }
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/score", post(score))
        .route("/retrieve", post(retrieve))
        .route("/healthz", get(healthz))
        .with_state(state)
}

fn error(status: StatusCode, reason: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": reason.into() }))).into_response()
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")))
}

fn pick<'a>(index: &'a IndexFile, mode: Mode) -> Result<&'a dyn Retriever, Response> {
    match mode {
        Mode::Sparse => Ok(&index.sparse),
        Mode::Dense => index
            .dense
            .as_ref()
            .map(|d| d as &dyn Retriever)
            .ok_or_else(|| error(StatusCode::BAD_REQUEST, "this server has no dense index")),
    }
}

fn loaded(state: &ServiceState) -> Result<&Arc<IndexFile>, Response> {
    state
        .index()
        .ok_or_else(|| error(StatusCode::SERVICE_UNAVAILABLE, "index not loaded"))
}

/// The same composition the trainer uses, shared by the endpoint and in-process callers.
pub fn score_request(state: &ServiceState, index: &IndexFile, req: &ScoreRequest) -> Result<ScoreResponse, String> {
    if req.gold_ids.is_empty() {
        return Err("gold_ids must not be empty".into());
    }
    let depth = req.depth.unwrap_or(state.default_depth);
    if depth == 0 {
        return Err("depth must be at least 1".into());
    }
    let start = Instant::now();
    let retriever = pick(index, req.mode).map_err(|_| "this server has no dense index".to_string())?;
    let s = score_output(retriever, &req.output, &req.gold_ids, depth, &state.reward);
    Ok(ScoreResponse {
        format_ok: s.parsed.valid,
        rank: s.rank.rank(),
        reward: s.reward,
        variant: state.reward.variant,
        retrieval_error: s.retrieval_error,
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

async fn score(State(state): State<Arc<ServiceState>>, body: Bytes) -> Response {
    let index = match loaded(&state) {
        Ok(i) => i.clone(),
        Err(r) => return r,
    };
    let req: ScoreRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(r) => return r,
    };
    match score_request(&state, &index, &req) {
        Ok(resp) => Json(resp).into_response(),
        Err(reason) => error(StatusCode::BAD_REQUEST, reason),
    }
}

async fn retrieve(State(state): State<Arc<ServiceState>>, body: Bytes) -> Response {
    let index = match loaded(&state) {
        Ok(i) => i.clone(),
        Err(r) => return r,
    };
    let req: RetrieveRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(r) => return r,
    };
    if req.k == 0 {
        return error(StatusCode::BAD_REQUEST, "k must be at least 1");
    }
    let retriever = match pick(&index, req.mode) {
        Ok(r) => r,
        Err(r) => return r,
    };
    match retriever.retrieve(&req.query, req.k) {
        Ok(list) => Json::<RankedList>(list).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn healthz(State(state): State<Arc<ServiceState>>) -> Response {
    match state.fingerprint.get() {
        Some(fp) => Json(serde_json::json!({ "status": "ok", "index_fingerprint": fp })).into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(serde_json::json!({ "status": "loading" })),
        )
            .into_response(),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("index load failed: {0}")]
    Load(String),
    #[error("{0}")]
    Server(String),
}

/// Binds, then loads the index in the background so `/healthz` reports 503 until ready.
/// Returns on Ctrl-C, or with the loader's error if loading fails.
pub async fn serve(
    bind: &str,
    state: Arc<ServiceState>,
    load: impl FnOnce() -> Result<IndexFile, String> + Send + 'static,
) -> Result<(), ServeError> {
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| ServeError::Server(format!("bind {bind}: {e}")))?;
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, "listening");
    }
    let (fail_tx, fail_rx) = tokio::sync::oneshot::channel::<String>();
    let loader = state.clone();
    tokio::task::spawn_blocking(move || match load() {
        Ok(index) => {
            loader.install(index);
            tracing::info!("index loaded");
        }
        Err(e) => {
            let _ = fail_tx.send(e);
        }
    });
    let failure = Arc::new(OnceLock::new());
    let failed = failure.clone();
    let shutdown = async move {
        let load_failed = async {
            match fail_rx.await {
                Ok(e) => {
                    let _ = failed.set(e);
                }
                // Sender dropped: the index loaded.
                Err(_) => std::future::pending::<()>().await,
            }
        };
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = load_failed => {}
        }
    };
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| ServeError::Server(e.to_string()))?;
    match failure.get() {
        Some(e) => Err(ServeError::Load(e.clone())),
        None => Ok(()),
    }
}
