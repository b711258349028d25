//! Detector contract, a seeded ground-truth-perturbing oracle, and a client
//! for a remote model service.

mod oracle;
mod remote;

pub use oracle::{oracle_detect, oracle_run, BetaParams, OracleOutput, OracleParams};
pub use remote::{remote_detect, DetectRequest, RemoteDetector, WireDetection, WireResponse};

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco::{CategorySpec, InstanceAnnotation};
use crate::metrics::Detection;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("bad oracle parameters: {0}")]
    BadParams(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("protocol error at `{field}`: {reason}")]
    ProtocolError { field: String, reason: String },
    #[error("remote returned status {status}: {body}")]
    RemoteFailure { status: u16, body: String },
    #[error("cannot read image {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, DetectorError>;

/// Everything a detector may look at for one image. The oracle reads the
/// ground truth; a remote model reads the pixels.
#[derive(Debug, Clone, Copy)]
pub struct DetectInput<'a> {
    pub image_id: u64,
    /// Position of the image in its corpus; keys the oracle's randomness.
    pub image_index: u64,
    pub width: u32,
    pub height: u32,
    pub ground_truth: &'a [InstanceAnnotation],
    pub categories: &'a [CategorySpec],
    pub image_path: Option<&'a std::path::Path>,
}

pub trait Detector: Send + Sync {
    fn descriptor(&self) -> String;
    fn detect(&self, input: &DetectInput<'_>) -> Result<Vec<Detection>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorKind {
    Oracle(OracleParams),
    Remote {
        endpoint: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
}

fn default_timeout_ms() -> u64 {
    10_000
}

fn default_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorHandle {
    #[serde(flatten)]
    pub kind: DetectorKind,
    #[serde(default)]
    pub descriptor: String,
}

impl DetectorHandle {
    pub fn oracle(params: OracleParams) -> Self {
        Self {
            descriptor: params.describe(),
            kind: DetectorKind::Oracle(params),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Detector>> {
        Ok(match &self.kind {
            DetectorKind::Oracle(p) => {
                p.validate()?;
                Box::new(p.clone())
            }
            DetectorKind::Remote {
                endpoint,
                timeout_ms,
                max_in_flight,
            } => Box::new(RemoteDetector::new(
                endpoint,
                Duration::from_millis(*timeout_ms),
                *max_in_flight,
            )?),
        })
    }
}

impl Detector for OracleParams {
    fn descriptor(&self) -> String {
        self.describe()
    }

    fn detect(&self, input: &DetectInput<'_>) -> Result<Vec<Detection>> {
        oracle_detect(input.ground_truth, (input.width, input.height), input.categories, self, input.image_index)
    }
}

impl Detector for RemoteDetector {
    fn descriptor(&self) -> String {
        format!("remote:{}", self.endpoint())
    }

    fn detect(&self, input: &DetectInput<'_>) -> Result<Vec<Detection>> {
        let path: PathBuf = input
            .image_path
            .ok_or_else(|| DetectorError::ProtocolError {
                field: "image".into(),
                reason: "remote detection needs image pixels".into(),
            })?
            .to_path_buf();
        let png = std::fs::read(&path).map_err(|source| DetectorError::Image {
            path: path.display().to_string(),
            source,
        })?;
        self.detect_png(input.image_id, input.width, input.height, &png)
    }
}
