use std::collections::{BTreeSet, HashMap};
use std::path::Path as FsPath;

use axum::extract::{FromRequest, FromRequestParts, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use polescan_core::api::{
    codes, DetectionSummary, EventsResponse, ExperimentDetail, ExperimentSummary, ImageDetail, ImagePage,
    InferenceRequest, IngestRequest, LabelsRequest, MapPoint, MetricsSummary, PromoteRequest, QueueItem,
    RouteRequest, RouteResponse, RouteSkip, ScanRequest, ScanResponse, TransitionResponse, VerdictRequest,
    DEFAULT_PAGE_SIZE, MAX_PAGE_SIZE,
};
use polescan_core::coco::standard_categories;
use polescan_core::dataset::Provenance;
use polescan_core::experiments::{list_results, load_result};
use polescan_core::tracker::{
    BlobStore, IngestMeta, LifecycleState, RoutingPolicy, TrackerError, Verdict, VerificationDecision, Watcher,
};
use serde::Deserialize;

use crate::error::ApiError;
use crate::state::{AppState, Inner};

pub const API_ACTOR: &str = "api";

#[derive(FromRequest)]
#[from_request(via(axum::Json), rejection(ApiError))]
pub struct ApiJson<T>(pub T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Query), rejection(ApiError))]
pub struct ApiQuery<T>(pub T);

type ApiResult<T> = Result<T, ApiError>;

/// Runs tracker and file-system work off the async executor.
async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Inner) -> ApiResult<T> + Send + 'static,
{
    let inner = state.inner.clone();
    tokio::task::spawn_blocking(move || f(&inner))
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

#[derive(Debug, Deserialize)]
pub struct ListParams {
    #[serde(default)]
    state: Option<String>,
    #[serde(default)]
    page: Option<usize>,
    #[serde(default)]
    page_size: Option<usize>,
}

pub async fn list_images(State(s): State<AppState>, ApiQuery(p): ApiQuery<ListParams>) -> ApiResult<Json<ImagePage>> {
    let state = match p.state.as_deref().map(str::trim) {
        None | Some("") => None,
        Some(v) => Some(v.parse::<LifecycleState>().map_err(ApiError::bad_request)?),
    };
    let page = p.page.unwrap_or(1);
    let page_size = p.page_size.unwrap_or(DEFAULT_PAGE_SIZE);
    if page == 0 || page_size == 0 {
        return Err(ApiError::bad_request("page and page_size start at 1"));
    }
    let page_size = page_size.min(MAX_PAGE_SIZE);
    blocking(&s, move |i| {
        let all = i.tracker.list(state);
        let total = all.len();
        let items = all.into_iter().skip((page - 1).saturating_mul(page_size)).take(page_size).collect();
        Ok(Json(ImagePage {
            items,
            page,
            page_size,
            total,
        }))
    })
    .await
}

pub async fn get_image(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<ImageDetail>> {
    blocking(&s, move |i| {
        Ok(Json(ImageDetail {
            record: i.tracker.get(&id)?,
            detections: i.tracker.inference(&id)?,
            verdict: i.tracker.verdicts(&id)?.pop(),
            labels: i.tracker.labels(&id)?,
        }))
    })
    .await
}

pub async fn image_history(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(&s, move |i| Ok(Json(i.tracker.image_history(&id)?).into_response())).await
}

fn content_type(uri: &str) -> &'static str {
    match FsPath::new(uri).extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    }
}

pub async fn image_blob(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(&s, move |i| {
        let record = i.tracker.get(&id)?;
        let bytes = i.blobs.read(&record.uri).map_err(|e| {
            ApiError::new(StatusCode::NOT_FOUND, codes::UNREADABLE_BLOB, format!("cannot read {}: {e}", record.uri))
        })?;
        Ok(([(header::CONTENT_TYPE, content_type(&record.uri))], bytes).into_response())
    })
    .await
}

fn summarize(inner: &Inner, image_id: &str) -> ApiResult<DetectionSummary> {
    let names: HashMap<u64, String> = standard_categories().into_iter().map(|c| (c.id, c.name)).collect();
    let dets = inner.tracker.inference(image_id)?.map(|r| r.detections).unwrap_or_default();
    let conf = dets.iter().map(|d| d.confidence);
    let categories: BTreeSet<String> = dets
        .iter()
        .map(|d| names.get(&d.category_id).cloned().unwrap_or_else(|| d.category_id.to_string()))
        .collect();
    Ok(DetectionSummary {
        count: dets.len(),
        min_confidence: conf.clone().reduce(f64::min),
        max_confidence: conf.reduce(f64::max),
        categories: categories.into_iter().collect(),
    })
}

pub async fn verification_queue(State(s): State<AppState>) -> ApiResult<Json<Vec<QueueItem>>> {
    blocking(&s, |i| {
        let mut out = Vec::new();
        for r in i.tracker.list(Some(LifecycleState::Verification)) {
            let history = i.tracker.image_history(&r.image_id)?;
            let entered = history
                .iter()
                .rev()
                .find(|e| e.to == LifecycleState::Verification)
                .map_or(0, |e| e.at);
            out.push(QueueItem {
                thumbnail_uri: format!("/api/images/{}/blob", r.image_id),
                detection_summary: summarize(i, &r.image_id)?,
                entered_verification_at: entered,
                state_version: r.state_version,
                image_id: r.image_id,
            });
        }
        Ok(Json(out))
    })
    .await
}

pub async fn submit_verdict(
    State(s): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<VerdictRequest>,
) -> ApiResult<Json<TransitionResponse>> {
    if req.reviewer.trim().is_empty() {
        return Err(ApiError::bad_request("reviewer is required"));
    }
    blocking(&s, move |i| {
        let decision = VerificationDecision {
            image_id: id.clone(),
            verdict: req.verdict,
            reviewer: req.reviewer,
            notes: req.notes,
            at: 0,
        };
        let event = i.tracker.apply_verdict(decision, req.expected_version)?;
        Ok(Json(TransitionResponse {
            event,
            record: i.tracker.get(&id)?,
        }))
    })
    .await
}

pub async fn promote(State(s): State<AppState>, ApiJson(req): ApiJson<PromoteRequest>) -> ApiResult<Json<EventsResponse>> {
    blocking(&s, move |i| {
        let actor = req.actor.unwrap_or_else(|| API_ACTOR.to_string());
        Ok(Json(EventsResponse {
            events: i.tracker.promote_staging(&req.image_ids, &actor)?,
        }))
    })
    .await
}

pub async fn map_points(State(s): State<AppState>) -> ApiResult<Json<Vec<MapPoint>>> {
    blocking(&s, |i| {
        let mut out = Vec::new();
        for r in i.tracker.list(None) {
            let Some(geo) = r.geo else { continue };
            out.push(MapPoint {
                verdict: i.tracker.verdicts(&r.image_id)?.last().map(|d| d.verdict),
                image_id: r.image_id,
                lat: geo.lat,
                lon: geo.lon,
                state: r.state,
            });
        }
        Ok(Json(out))
    })
    .await
}

pub async fn experiments(State(s): State<AppState>) -> ApiResult<Json<Vec<ExperimentSummary>>> {
    blocking(&s, |i| {
        let results = list_results(&i.results_dir)?;
        Ok(Json(results.iter().map(ExperimentSummary::from_result).collect()))
    })
    .await
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

pub async fn experiment(State(s): State<AppState>, Path(name): Path<String>) -> ApiResult<Json<ExperimentDetail>> {
    if !valid_name(&name) {
        return Err(ApiError::bad_request(format!("invalid experiment name `{name}`")));
    }
    blocking(&s, move |i| Ok(Json(ExperimentDetail::from_result(load_result(&i.results_dir, &name)?)))).await
}

pub async fn metrics_summary(State(s): State<AppState>) -> ApiResult<Json<MetricsSummary>> {
    blocking(&s, |i| {
        let census = i.tracker.census();
        let verdicts = i.tracker.all_verdicts();
        let correct = verdicts.iter().filter(|d| d.verdict == Verdict::Correct).count();
        let total = verdicts.len();
        Ok(Json(MetricsSummary {
            total_images: census.values().sum(),
            census,
            verdicts: total,
            correct,
            incorrect: total - correct,
            accuracy: (total > 0).then(|| correct as f64 / total as f64),
        }))
    })
    .await
}

pub async fn ingest(State(s): State<AppState>, ApiJson(req): ApiJson<IngestRequest>) -> ApiResult<Response> {
    blocking(&s, move |i| {
        let meta = IngestMeta {
            provenance: req.provenance.unwrap_or(Provenance::Real),
            geo: req.geo,
            width: None,
            height: None,
        };
        let record = i.tracker.ingest_image(&i.blobs, &req.uri, meta)?;
        Ok((StatusCode::CREATED, Json(record)).into_response())
    })
    .await
}

pub async fn scan(State(s): State<AppState>, ApiJson(req): ApiJson<ScanRequest>) -> ApiResult<Json<ScanResponse>> {
    blocking(&s, move |i| {
        let mut watchers = i.watchers.lock();
        let w = watchers
            .entry(req.prefix.clone())
            .or_insert_with(|| Watcher::new(req.prefix.clone(), IngestMeta::default()));
        let outcomes = w
            .poll_once(&i.blobs, &i.tracker)
            .map_err(|e| ApiError::bad_request(format!("cannot scan `{}`: {e}", req.prefix)))?;
        Ok(Json(ScanResponse { outcomes }))
    })
    .await
}

pub async fn route(State(s): State<AppState>, ApiJson(req): ApiJson<RouteRequest>) -> ApiResult<Json<RouteResponse>> {
    blocking(&s, move |i| {
        let policy = RoutingPolicy {
            labeling_fraction: req.labeling_fraction,
            salt: req.salt,
            override_target: req.override_target,
        };
        let ids = match req.image_ids {
            Some(ids) => ids,
            None => i
                .tracker
                .list(Some(LifecycleState::Incoming))
                .into_iter()
                .map(|r| r.image_id)
                .collect(),
        };
        let mut out = RouteResponse {
            events: Vec::new(),
            skipped: Vec::new(),
        };
        for id in ids {
            match i.tracker.route_image(&id, &policy, None) {
                Ok(e) => out.events.push(e),
                Err(e @ TrackerError::BadPolicy(_)) => return Err(e.into()),
                Err(e) => {
                    let api = ApiError::from(e);
                    out.skipped.push(RouteSkip {
                        image_id: id,
                        code: api.code.to_string(),
                        message: api.message,
                    });
                }
            }
        }
        Ok(Json(out))
    })
    .await
}

pub async fn record_inference(
    State(s): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<InferenceRequest>,
) -> ApiResult<Json<TransitionResponse>> {
    blocking(&s, move |i| {
        let event = i
            .tracker
            .record_inference(&id, req.detections, &req.detector, req.expected_version)?;
        Ok(Json(TransitionResponse {
            event,
            record: i.tracker.get(&id)?,
        }))
    })
    .await
}

pub async fn complete_labeling(
    State(s): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<LabelsRequest>,
) -> ApiResult<Json<TransitionResponse>> {
    blocking(&s, move |i| {
        let event = i
            .tracker
            .complete_labeling(&id, req.annotations, &req.actor, req.expected_version)?;
        Ok(Json(TransitionResponse {
            event,
            record: i.tracker.get(&id)?,
        }))
    })
    .await
}

pub async fn api_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, codes::NOT_FOUND, "no such endpoint")
}
