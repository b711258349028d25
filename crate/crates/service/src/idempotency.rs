use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};
use parking_lot::Mutex;
use polescan_core::api::{codes, IDEMPOTENCY_HEADER, REPLAYED_HEADER};
use sha2::{Digest, Sha256};

use crate::error::ApiError;

pub const MAX_BODY_BYTES: usize = 16 * 1024 * 1024;
pub const DEFAULT_CAPACITY: usize = 10_000;

#[derive(Debug, Clone)]
struct Stored {
    request_digest: [u8; 32],
    status: StatusCode,
    content_type: Option<HeaderValue>,
    body: Bytes,
}

type Slot = Arc<tokio::sync::Mutex<Option<Stored>>>;

/// Outcomes of keyed POST requests. Concurrent requests with the same key
/// are serialized on the key, so only the first one reaches the handler.
#[derive(Debug)]
pub struct IdempotencyCache {
    capacity: usize,
    inner: Mutex<(HashMap<String, Slot>, VecDeque<String>)>,
}

impl IdempotencyCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            inner: Mutex::new((HashMap::new(), VecDeque::new())),
        }
    }

    fn slot(&self, key: &str) -> Slot {
        let mut guard = self.inner.lock();
        let (map, order) = &mut *guard;
        if let Some(s) = map.get(key) {
            return s.clone();
        }
        while map.len() >= self.capacity {
            match order.pop_front() {
                Some(old) => {
                    map.remove(&old);
                }
                None => break,
            }
        }
        let slot = Slot::default();
        map.insert(key.to_string(), slot.clone());
        order.push_back(key.to_string());
        slot
    }
}

impl Default for IdempotencyCache {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY)
    }
}

fn replay(stored: &Stored) -> Response {
    let mut resp = (stored.status, stored.body.clone()).into_response();
    if let Some(ct) = &stored.content_type {
        resp.headers_mut().insert(header::CONTENT_TYPE, ct.clone());
    }
    resp.headers_mut().insert(REPLAYED_HEADER, HeaderValue::from_static("true"));
    resp
}

/// Replays the stored outcome of a POST carrying an already seen
/// `Idempotency-Key`. Server errors are not stored, so they can be retried.
pub async fn idempotency(State(cache): State<Arc<IdempotencyCache>>, req: Request, next: Next) -> Response {
    if req.method() != Method::POST {
        return next.run(req).await;
    }
    let Some(key) = req
        .headers()
        .get(IDEMPOTENCY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned)
    else {
        return next.run(req).await;
    };
    let (parts, body) = req.into_parts();
    let bytes = match to_bytes(body, MAX_BODY_BYTES).await {
        Ok(b) => b,
        Err(e) => return ApiError::bad_request(format!("cannot read body: {e}")).into_response(),
    };
    let request_digest: [u8; 32] = Sha256::digest(&bytes).into();
    let slot = cache.slot(&format!("{} {key}", parts.uri.path()));
    let mut guard = slot.lock().await;
    if let Some(stored) = guard.as_ref() {
        if stored.request_digest != request_digest {
            return ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                codes::IDEMPOTENCY_MISMATCH,
                "idempotency key reused with a different body",
            )
            .into_response();
        }
        return replay(stored);
    }

    let resp = next.run(Request::from_parts(parts, Body::from(bytes))).await;
    let (rparts, rbody) = resp.into_parts();
    let body = match to_bytes(rbody, usize::MAX).await {
        Ok(b) => b,
        Err(e) => return ApiError::internal(format!("cannot buffer response: {e}")).into_response(),
    };
    if !rparts.status.is_server_error() {
        *guard = Some(Stored {
            request_digest,
            status: rparts.status,
            content_type: rparts.headers.get(header::CONTENT_TYPE).cloned(),
            body: body.clone(),
        });
    }
    Response::from_parts(rparts, Body::from(body))
}
