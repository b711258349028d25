//! Request and response bodies of the HTTP API, shared by the service and
//! its clients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::coco::InstanceAnnotation;
use crate::dataset::Provenance;
use crate::experiments::{ComparisonRow, ExperimentResult};
use crate::metrics::Detection;
use crate::tracker::{
    GeoPoint, ImageRecord, InferenceResult, LifecycleState, TransitionEvent, Verdict, VerificationDecision,
    WatchOutcome,
};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
pub const REPLAYED_HEADER: &str = "idempotent-replayed";
pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 500;

/// Stable machine-readable error codes.
pub mod codes {
    pub const BAD_REQUEST: &str = "BAD_REQUEST";
    pub const NOT_FOUND: &str = "NOT_FOUND";
    pub const UNKNOWN_IMAGE: &str = "UNKNOWN_IMAGE";
    pub const UNKNOWN_EXPERIMENT: &str = "UNKNOWN_EXPERIMENT";
    pub const ILLEGAL_STATE: &str = "ILLEGAL_STATE";
    pub const VERSION_CONFLICT: &str = "VERSION_CONFLICT";
    pub const DUPLICATE_DECISION: &str = "DUPLICATE_DECISION";
    pub const DUPLICATE_CONTENT: &str = "DUPLICATE_CONTENT";
    pub const EMPTY_BATCH: &str = "EMPTY_BATCH";
    pub const BAD_POLICY: &str = "BAD_POLICY";
    pub const UNREADABLE_BLOB: &str = "UNREADABLE_BLOB";
    pub const INVALID_ANNOTATIONS: &str = "INVALID_ANNOTATIONS";
    pub const IDEMPOTENCY_MISMATCH: &str = "IDEMPOTENCY_MISMATCH";
    pub const CORRUPT_LOG: &str = "CORRUPT_LOG";
    pub const INTERNAL: &str = "INTERNAL";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePage {
    pub items: Vec<ImageRecord>,
    /// 1-based.
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDetail {
    pub record: ImageRecord,
    /// Detector output behind the current or most recent verification.
    pub detections: Option<InferenceResult>,
    /// Latest verdict.
    pub verdict: Option<VerificationDecision>,
    pub labels: Option<Vec<InstanceAnnotation>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub count: usize,
    pub min_confidence: Option<f64>,
    pub max_confidence: Option<f64>,
    /// Category names, sorted and deduplicated.
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub image_id: String,
    pub thumbnail_uri: String,
    pub detection_summary: DetectionSummary,
    /// UTC milliseconds.
    pub entered_verification_at: u64,
    pub state_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRequest {
    pub verdict: Verdict,
    pub reviewer: String,
    #[serde(default)]
    pub notes: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_version: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionResponse {
    pub event: TransitionEvent,
    pub record: ImageRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromoteRequest {
    pub image_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventsResponse {
    pub events: Vec<TransitionEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPoint {
    pub image_id: String,
    pub lat: f64,
    pub lon: f64,
    pub state: LifecycleState,
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    #[serde(flatten)]
    pub row: ComparisonRow,
    pub baseline: Option<String>,
    pub detector: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDetail {
    pub row: ComparisonRow,
    pub baseline: Option<String>,
    pub result: ExperimentResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub total_images: usize,
    pub census: BTreeMap<LifecycleState, usize>,
    pub verdicts: usize,
    pub correct: usize,
    pub incorrect: usize,
    /// correct / verdicts; `None` before the first verdict.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRequest {
    pub uri: String,
    #[serde(default)]
    pub provenance: Option<Provenance>,
    #[serde(default)]
    pub geo: Option<GeoPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRequest {
    pub prefix: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResponse {
    pub outcomes: Vec<WatchOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRequest {
    pub labeling_fraction: f64,
    #[serde(default)]
    pub salt: String,
    #[serde(default)]
    pub override_target: Option<LifecycleState>,
    /// Every `Incoming` image when absent.
    #[serde(default)]
    pub image_ids: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSkip {
    pub image_id: String,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteResponse {
    pub events: Vec<TransitionEvent>,
    pub skipped: Vec<RouteSkip>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRequest {
    pub detector: String,
    pub detections: Vec<Detection>,
    #[serde(default)]
    pub expected_version: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelsRequest {
    pub annotations: Vec<InstanceAnnotation>,
    pub actor: String,
    #[serde(default)]
    pub expected_version: Option<u64>,
}

impl ExperimentSummary {
    pub fn from_result(r: &ExperimentResult) -> Self {
        Self {
            row: comparison_row(r),
            baseline: r.config.baseline.clone(),
            detector: r.detector.clone(),
        }
    }
}

impl ExperimentDetail {
    pub fn from_result(result: ExperimentResult) -> Self {
        Self {
            row: comparison_row(&result),
            baseline: result.config.baseline.clone(),
            result,
        }
    }
}

/// The row a persisted result contributes to a comparison against its own
/// baseline.
pub fn comparison_row(r: &ExperimentResult) -> ComparisonRow {
    ComparisonRow {
        name: r.name.clone(),
        real_train: r.config.real_train,
        synthetic_train: r.config.synthetic_train,
        tier: r.config.resolution_tier.map_or_else(|| "any".to_string(), |t| t.to_string()),
        map_percent: 100.0 * r.map_value,
        lift_percent: r.lift_vs_baseline,
    }
}
