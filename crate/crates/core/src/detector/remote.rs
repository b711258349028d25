use std::time::Duration;

use base64::Engine;
use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{DetectorError, Result};
use crate::coco::BBox;
use crate::metrics::Detection;

/// Body of `POST /detect`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub image_id: u64,
    pub width: u32,
    pub height: u32,
    /// Base64 of the PNG file.
    pub pixels: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub bbox: [f64; 4],
    pub score: f64,
    pub category_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub detections: Vec<WireDetection>,
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cv.wait(&mut free);
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.cv.notify_one();
    }
}

/// Blocking client for a model server speaking the `/detect` contract.
pub struct RemoteDetector {
    endpoint: String,
    timeout: Duration,
    client: reqwest::blocking::Client,
    slots: Slots,
}

impl RemoteDetector {
    pub fn new(endpoint: &str, timeout: Duration, max_in_flight: usize) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .connect_timeout(timeout)
            .build()
            .map_err(|e| DetectorError::Unreachable(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            timeout,
            client,
            slots: Slots {
                free: Mutex::new(max_in_flight.max(1)),
                cv: Condvar::new(),
            },
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn detect_png(&self, image_id: u64, width: u32, height: u32, png: &[u8]) -> Result<Vec<Detection>> {
        let request = DetectRequest {
            image_id,
            width,
            height,
            pixels: base64::engine::general_purpose::STANDARD.encode(png),
        };
        let _permit = self.slots.acquire();
        let url = format!("{}/detect", self.endpoint);
        let response = self
            .client
            .post(&url)
            .json(&request)
            .send()
            .map_err(|e| self.transport(e))?;
        let status = response.status();
        let body = response.bytes().map_err(|e| self.transport(e))?;
        if !status.is_success() {
            return Err(DetectorError::RemoteFailure {
                status: status.as_u16(),
                body: String::from_utf8_lossy(&body).into_owned(),
            });
        }
        parse_response(&body, image_id)
    }

    fn transport(&self, e: reqwest::Error) -> DetectorError {
        if e.is_timeout() {
            DetectorError::Timeout(self.timeout)
        } else if e.is_connect() {
            DetectorError::Unreachable(e.to_string())
        } else {
            DetectorError::RemoteFailure {
                status: 0,
                body: e.to_string(),
            }
        }
    }
}

/// One-off remote call with a fresh client.
pub fn remote_detect(endpoint: &str, timeout: Duration, image_id: u64, width: u32, height: u32, png: &[u8]) -> Result<Vec<Detection>> {
    RemoteDetector::new(endpoint, timeout, 1)?.detect_png(image_id, width, height, png)
}

fn protocol(field: impl Into<String>, reason: impl Into<String>) -> DetectorError {
    DetectorError::ProtocolError {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Validates a response field by field so errors can name the offender.
fn parse_response(body: &[u8], image_id: u64) -> Result<Vec<Detection>> {
    let v: Value = serde_json::from_slice(body).map_err(|e| protocol("$", format!("invalid JSON: {e}")))?;
    let list = v
        .get("detections")
        .ok_or_else(|| protocol("detections", "missing"))?
        .as_array()
        .ok_or_else(|| protocol("detections", "not an array"))?;
    list.iter()
        .enumerate()
        .map(|(i, d)| {
            let field = |name: &str| format!("detections[{i}].{name}");
            let bbox = d
                .get("bbox")
                .and_then(Value::as_array)
                .filter(|a| a.len() == 4)
                .ok_or_else(|| protocol(field("bbox"), "expected [x, y, w, h]"))?;
            let mut b = [0.0; 4];
            for (k, x) in bbox.iter().enumerate() {
                b[k] = x
                    .as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| protocol(field("bbox"), "non-numeric coordinate"))?;
            }
            if b[2] <= 0.0 || b[3] <= 0.0 {
                return Err(protocol(field("bbox"), "non-positive width or height"));
            }
            let score = d
                .get("score")
                .and_then(Value::as_f64)
                .ok_or_else(|| protocol(field("score"), "missing or non-numeric"))?;
            if !(0.0..=1.0).contains(&score) {
                return Err(protocol(field("score"), format!("{score} outside [0, 1]")));
            }
            let category_id = d
                .get("category_id")
                .and_then(Value::as_u64)
                .ok_or_else(|| protocol(field("category_id"), "missing or not an unsigned integer"))?;
            let segmentation = match d.get("segmentation") {
                None | Some(Value::Null) => None,
                Some(s) => Some(
                    serde_json::from_value::<Vec<Vec<f64>>>(s.clone())
                        .map_err(|e| protocol(field("segmentation"), e.to_string()))?,
                ),
            };
            Ok(Detection {
                image_id,
                category_id,
                bbox: BBox::new(b[0], b[1], b[2], b[3]),
                segmentation,
                confidence: score,
            })
        })
        .collect()
}
