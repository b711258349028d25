use std::time::Duration;

use polescan_core::api::{
    ErrorBody, EventsResponse, ExperimentDetail, ExperimentSummary, ImageDetail, ImagePage, InferenceRequest,
    IngestRequest, LabelsRequest, MapPoint, MetricsSummary, PromoteRequest, QueueItem, RouteRequest, RouteResponse,
    ScanRequest, ScanResponse, TransitionResponse, VerdictRequest, IDEMPOTENCY_HEADER,
};
use polescan_core::tracker::{ImageRecord, LifecycleState, TransitionEvent};
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_SERVER: &str = "http://127.0.0.1:8080";
const ATTEMPTS: u32 = 3;
const RETRY_DELAY: Duration = Duration::from_millis(200);

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{status} {code}: {message}")]
    Api {
        status: u16,
        code: String,
        message: String,
        detail: serde_json::Value,
    },
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected response ({status}): {body}")]
    Decode { status: u16, body: String },
}

impl ClientError {
    /// The machine-readable code of an API error.
    pub fn code(&self) -> Option<&str> {
        match self {
            Self::Api { code, .. } => Some(code),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

/// Async client for the service's HTTP API.
///
/// Every POST carries an `Idempotency-Key`, generated per call unless one
/// is supplied, and is retried with the same key after transport failures
/// and server errors.
#[derive(Debug, Clone)]
pub struct ServiceClient {
    base: String,
    http: reqwest::Client,
}

impl ServiceClient {
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
        let status = resp.status();
        let bytes = resp.bytes().await?;
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|_| ClientError::Decode {
                status: status.as_u16(),
                body: String::from_utf8_lossy(&bytes).into_owned(),
            });
        }
        match serde_json::from_slice::<ErrorBody>(&bytes) {
            Ok(e) => Err(ClientError::Api {
                status: status.as_u16(),
                code: e.code,
                message: e.message,
                detail: e.detail,
            }),
            Err(_) => Err(ClientError::Decode {
                status: status.as_u16(),
                body: String::from_utf8_lossy(&bytes).into_owned(),
            }),
        }
    }

    async fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, String)]) -> Result<T> {
        let resp = self.http.get(format!("{}{path}", self.base)).query(query).send().await?;
        Self::decode(resp).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B, key: Option<&str>) -> Result<T> {
        let key = key.map_or_else(|| uuid::Uuid::new_v4().to_string(), str::to_string);
        let url = format!("{}{path}", self.base);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let sent = self
                .http
                .request(Method::POST, &url)
                .header(IDEMPOTENCY_HEADER, &key)
                .json(body)
                .send()
                .await;
            let retryable = match &sent {
                Ok(r) => r.status().is_server_error() && r.status() != StatusCode::NOT_IMPLEMENTED,
                Err(e) => e.is_connect() || e.is_timeout(),
            };
            if retryable && attempt < ATTEMPTS {
                tokio::time::sleep(RETRY_DELAY * attempt).await;
                continue;
            }
            return Self::decode(sent?).await;
        }
    }

    pub async fn list_images(
        &self,
        state: Option<LifecycleState>,
        page: Option<usize>,
        page_size: Option<usize>,
    ) -> Result<ImagePage> {
        let mut q = Vec::new();
        if let Some(s) = state {
            q.push(("state", s.to_string()));
        }
        if let Some(p) = page {
            q.push(("page", p.to_string()));
        }
        if let Some(p) = page_size {
            q.push(("page_size", p.to_string()));
        }
        self.get("/api/images", &q).await
    }

    pub async fn image(&self, id: &str) -> Result<ImageDetail> {
        self.get(&format!("/api/images/{id}"), &[]).await
    }

    pub async fn history(&self, id: &str) -> Result<Vec<TransitionEvent>> {
        self.get(&format!("/api/images/{id}/history"), &[]).await
    }

    pub async fn blob(&self, id: &str) -> Result<Vec<u8>> {
        let resp = self.http.get(format!("{}/api/images/{id}/blob", self.base)).send().await?;
        if resp.status().is_success() {
            return Ok(resp.bytes().await?.to_vec());
        }
        Self::decode::<serde_json::Value>(resp).await.map(|_| Vec::new())
    }

    pub async fn queue(&self) -> Result<Vec<QueueItem>> {
        self.get("/api/verification/queue", &[]).await
    }

    pub async fn submit_verdict(&self, id: &str, req: &VerdictRequest, key: Option<&str>) -> Result<TransitionResponse> {
        self.post(&format!("/api/verification/{id}"), req, key).await
    }

    pub async fn promote(&self, req: &PromoteRequest, key: Option<&str>) -> Result<EventsResponse> {
        self.post("/api/staging/promote", req, key).await
    }

    pub async fn map(&self) -> Result<Vec<MapPoint>> {
        self.get("/api/map", &[]).await
    }

    pub async fn experiments(&self) -> Result<Vec<ExperimentSummary>> {
        self.get("/api/experiments", &[]).await
    }

    pub async fn experiment(&self, name: &str) -> Result<ExperimentDetail> {
        self.get(&format!("/api/experiments/{name}"), &[]).await
    }

    pub async fn metrics_summary(&self) -> Result<MetricsSummary> {
        self.get("/api/metrics/summary", &[]).await
    }

    pub async fn ingest(&self, req: &IngestRequest, key: Option<&str>) -> Result<ImageRecord> {
        self.post("/api/ingest", req, key).await
    }

    pub async fn scan(&self, prefix: &str) -> Result<ScanResponse> {
        self.post(
            "/api/ingest/scan",
            &ScanRequest {
                prefix: prefix.to_string(),
            },
            None,
        )
        .await
    }

    pub async fn route(&self, req: &RouteRequest, key: Option<&str>) -> Result<RouteResponse> {
        self.post("/api/route", req, key).await
    }

    pub async fn record_inference(
        &self,
        id: &str,
        req: &InferenceRequest,
        key: Option<&str>,
    ) -> Result<TransitionResponse> {
        self.post(&format!("/api/images/{id}/inference"), req, key).await
    }

    pub async fn complete_labeling(&self, id: &str, req: &LabelsRequest, key: Option<&str>) -> Result<TransitionResponse> {
        self.post(&format!("/api/images/{id}/labels"), req, key).await
    }
}
