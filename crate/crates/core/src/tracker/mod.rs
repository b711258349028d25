//! Event-sourced image lifecycle.
//!
//! Each image moves through a fixed state graph. Every transition is appended
//! to `events.jsonl` as one JSON object per line:
//!
//! ```text
//! {"image_id":"...","from":"Incoming","to":"Labeling","at":1700000000000,"actor":"system","reason":"route:labeling","version_after":1}
//! ```
//!
//! Payloads (the ingested record, detections, verdicts, labels) go to
//! `attachments.jsonl`, keyed by `(image_id, version)`, and are always written
//! before the event they belong to. On open the log is replayed; attachments
//! without a matching event are ignored and a torn final line is dropped.

mod blob;
mod log;
mod store;
mod watch;

pub use blob::{BlobStore, LocalBlobStore};
pub use log::{ATTACHMENTS_FILE, EVENTS_FILE};
pub use store::{routes_to_labeling, system_clock, Clock, IngestMeta, RoutingPolicy, Tracker};
pub use watch::{Watcher, WatchOutcome, DEFAULT_POLL_INTERVAL};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco::{InstanceAnnotation, ValidationReport};
use crate::dataset::{Provenance, ResolutionTier};
use crate::metrics::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LifecycleState {
    Incoming,
    BatchPrediction,
    Verification,
    Verified,
    Staging,
    Labeling,
    TrainingPool,
    Archived,
}

impl LifecycleState {
    pub const ALL: [LifecycleState; 8] = [
        Self::Incoming,
        Self::BatchPrediction,
        Self::Verification,
        Self::Verified,
        Self::Staging,
        Self::Labeling,
        Self::TrainingPool,
        Self::Archived,
    ];

    pub fn can_transition(self, to: LifecycleState) -> bool {
        use LifecycleState::*;
        matches!(
            (self, to),
            (Incoming, BatchPrediction)
                | (Incoming, Labeling)
                | (BatchPrediction, Verification)
                | (Verification, Verified)
                | (Verification, Staging)
                | (Staging, Labeling)
                | (Labeling, TrainingPool)
        ) || (to == Archived && self != Archived)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Incoming => "Incoming",
            Self::BatchPrediction => "BatchPrediction",
            Self::Verification => "Verification",
            Self::Verified => "Verified",
            Self::Staging => "Staging",
            Self::Labeling => "Labeling",
            Self::TrainingPool => "TrainingPool",
            Self::Archived => "Archived",
        }
    }
}

impl fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LifecycleState {
    type Err = String;

    /// Accepts `BatchPrediction`, `batchprediction` and `batch_prediction`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let key: String = s.chars().filter(|c| *c != '_' && *c != '-').collect::<String>().to_lowercase();
        Self::ALL
            .into_iter()
            .find(|st| st.as_str().to_lowercase() == key)
            .ok_or_else(|| format!("unknown lifecycle state `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    /// 1-based creation order; the image id used in COCO exports.
    pub ordinal: u64,
    pub uri: String,
    pub sha256: String,
    pub width: u32,
    pub height: u32,
    pub provenance: Provenance,
    pub resolution_tier: ResolutionTier,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo: Option<GeoPoint>,
    pub state: LifecycleState,
    pub state_version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionEvent {
    pub image_id: String,
    pub from: LifecycleState,
    pub to: LifecycleState,
    /// UTC milliseconds since the Unix epoch.
    pub at: u64,
    pub actor: String,
    pub reason: String,
    pub version_after: u64,
}

impl TransitionEvent {
    pub fn is_creation(&self) -> bool {
        self.from == LifecycleState::Incoming && self.to == LifecycleState::Incoming && self.version_after == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationDecision {
    pub image_id: String,
    pub verdict: Verdict,
    pub reviewer: String,
    #[serde(default)]
    pub notes: String,
    #[serde(default)]
    pub at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub detector: String,
    pub detections: Vec<Detection>,
    pub at: u64,
}

/// A labeled image ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolImage {
    pub record: ImageRecord,
    pub annotations: Vec<InstanceAnnotation>,
}

/// Replays a chain of events; `None` for an empty or broken chain.
pub fn fold(events: &[TransitionEvent]) -> Option<(LifecycleState, u64)> {
    let (first, rest) = events.split_first()?;
    if !first.is_creation() {
        return None;
    }
    let mut cur = (first.to, first.version_after);
    for e in rest {
        if e.from != cur.0 || e.version_after != cur.1 + 1 || !e.from.can_transition(e.to) {
            return None;
        }
        cur = (e.to, e.version_after);
    }
    Some(cur)
}

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("cannot read blob {uri}: {reason}")]
    UnreadableBlob { uri: String, reason: String },
    #[error("duplicate content; already ingested as {existing}")]
    Duplicate { existing: String },
    #[error("image {image_id} is in {state}; cannot move to {attempted}")]
    IllegalState {
        image_id: String,
        state: LifecycleState,
        attempted: LifecycleState,
    },
    #[error("version conflict on {image_id}: expected {expected}, current {actual}")]
    VersionConflict { image_id: String, expected: u64, actual: u64 },
    #[error("a verdict was already applied to this verification of {image_id}")]
    DuplicateDecision { image_id: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("unknown image {0}")]
    UnknownImage(String),
    #[error("annotations failed validation: {} finding(s)", .0.findings.len())]
    InvalidAnnotations(ValidationReport),
    #[error("bad routing policy: {0}")]
    BadPolicy(String),
    #[error("corrupt log {file} at line {line}: {reason}")]
    CorruptLog { file: String, line: usize, reason: String },
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TrackerError>;
