//! HTTP/JSON API over the image lifecycle tracker and persisted experiment
//! results.
//!
//! Mutating endpoints delegate to tracker operations; tracker errors come
//! back as `{code, message, detail}` bodies. POST requests carrying an
//! `Idempotency-Key` header are replayed from a cache instead of being
//! applied twice.

use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::middleware;
use axum::routing::{any, get, post};
use axum::Router;
use polescan_core::tracker::{IngestMeta, LocalBlobStore, Tracker, TrackerError, Watcher};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::services::ServeDir;
use tower_http::trace::TraceLayer;

mod error;
mod handlers;
mod idempotency;
mod state;

pub use error::ApiError;
pub use idempotency::IdempotencyCache;
pub use state::AppState;

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

fn default_bind() -> SocketAddr {
    DEFAULT_BIND.parse().expect("valid default address")
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatchConfig {
    /// Blob-store prefix polled for new images.
    pub prefix: String,
    #[serde(default = "default_interval_ms")]
    pub interval_ms: u64,
}

fn default_interval_ms() -> u64 {
    polescan_core::tracker::DEFAULT_POLL_INTERVAL.as_millis() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    /// Directory of the tracker's event log.
    pub data_dir: PathBuf,
    /// Root of the local blob store; image uris are relative to it.
    pub blob_root: PathBuf,
    /// Directory holding `<experiment>/report.json`.
    pub results_dir: PathBuf,
    /// Built web client served at `/`.
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
    #[serde(default)]
    pub watch: Option<WatchConfig>,
    /// fsync after every append.
    #[serde(default = "default_true")]
    pub durable: bool,
}

impl ServiceConfig {
    /// Paths under `root`: `tracker/`, `blobs/` and `results/`.
    pub fn rooted(root: &Path) -> Self {
        Self {
            bind: default_bind(),
            data_dir: root.join("tracker"),
            blob_root: root.join("blobs"),
            results_dir: root.join("results"),
            static_dir: None,
            watch: None,
            durable: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("refusing to start: corrupt log {file} at line {line}: {reason}")]
    CorruptLog { file: String, line: usize, reason: String },
    #[error("cannot open tracker: {0}")]
    Tracker(TrackerError),
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("server failed: {0}")]
    Serve(#[source] std::io::Error),
}

impl AppState {
    pub fn open(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        let tracker = Tracker::open_with(&cfg.data_dir, cfg.durable).map_err(|e| match e {
            TrackerError::CorruptLog { file, line, reason } => ServiceError::CorruptLog { file, line, reason },
            other => ServiceError::Tracker(other),
        })?;
        Ok(Self::new(tracker, LocalBlobStore::new(&cfg.blob_root), cfg.results_dir.clone()))
    }
}

/// Every endpoint, with the web client mounted at `/` when `static_dir` is
/// given.
pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    use handlers::*;
    let cache = Arc::new(IdempotencyCache::default());
    let api = Router::new()
        .route("/api/images", get(list_images))
        .route("/api/images/{id}", get(get_image))
        .route("/api/images/{id}/history", get(image_history))
        .route("/api/images/{id}/blob", get(image_blob))
        .route("/api/images/{id}/inference", post(record_inference))
        .route("/api/images/{id}/labels", post(complete_labeling))
        .route("/api/verification/queue", get(verification_queue))
        .route("/api/verification/{id}", post(submit_verdict))
        .route("/api/staging/promote", post(promote))
        .route("/api/map", get(map_points))
        .route("/api/experiments", get(experiments))
        .route("/api/experiments/{name}", get(experiment))
        .route("/api/metrics/summary", get(metrics_summary))
        .route("/api/ingest", post(ingest))
        .route("/api/ingest/scan", post(scan))
        .route("/api/route", post(route))
        .route("/api/{*rest}", any(api_not_found))
        .route_layer(middleware::from_fn_with_state(cache, idempotency::idempotency))
        .with_state(state);
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api.fallback(api_not_found),
    };
    app.layer(TraceLayer::new_for_http())
}

/// A bound, not yet running service.
pub struct Server {
    listener: tokio::net::TcpListener,
    app: Router,
    state: AppState,
    watch: Option<WatchConfig>,
}

impl Server {
    /// Opens the tracker (refusing a corrupt log) and binds the listener.
    pub async fn bind(cfg: ServiceConfig) -> Result<Self, ServiceError> {
        let state = AppState::open(&cfg)?;
        let listener = tokio::net::TcpListener::bind(cfg.bind)
            .await
            .map_err(|source| ServiceError::BindFailure { addr: cfg.bind, source })?;
        Ok(Self {
            app: router(state.clone(), cfg.static_dir.as_deref()),
            listener,
            state,
            watch: cfg.watch,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn state(&self) -> &AppState {
        &self.state
    }

    /// Serves until `shutdown` resolves.
    pub async fn run(self, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServiceError> {
        tracing::info!(addr = %self.local_addr(), "serving");
        let watcher = self.watch.map(|w| tokio::spawn(watch_loop(self.state.clone(), w)));
        let result = axum::serve(self.listener, self.app)
            .with_graceful_shutdown(shutdown)
            .await
            .map_err(ServiceError::Serve);
        if let Some(w) = watcher {
            w.abort();
        }
        result
    }
}

/// Binds and serves until `shutdown` resolves.
pub async fn serve_api(cfg: ServiceConfig, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServiceError> {
    Server::bind(cfg).await?.run(shutdown).await
}

async fn watch_loop(state: AppState, cfg: WatchConfig) {
    let mut ticker = tokio::time::interval(Duration::from_millis(cfg.interval_ms.max(1)));
    let watcher = Arc::new(parking_lot::Mutex::new(Watcher::new(cfg.prefix.clone(), IngestMeta::default())));
    loop {
        ticker.tick().await;
        let (s, w) = (state.clone(), watcher.clone());
        let polled = tokio::task::spawn_blocking(move || w.lock().poll_once(s.blobs(), s.tracker())).await;
        match polled {
            Ok(Ok(outcomes)) => {
                for o in outcomes {
                    tracing::info!(outcome = ?o, "watch");
                }
            }
            Ok(Err(e)) => tracing::warn!(prefix = %cfg.prefix, error = %e, "watch poll failed"),
            Err(e) => tracing::error!(error = %e, "watch task failed"),
        }
    }
}
