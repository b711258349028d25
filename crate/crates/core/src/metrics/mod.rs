//! Detection evaluation: IoU, greedy matching, COCO-style average precision,
//! F1-vs-confidence sweeps, the healthy/defective instance confusion matrix,
//! and lift over a baseline.

mod ap;
mod confusion;
mod iou;
mod matching;

pub use ap::{
    average_precision, f1_confidence_sweep, mean_average_precision, EvalReport, F1Point, IouAp,
    IOU_THRESHOLDS,
};
pub use confusion::{
    class_metrics, corpus_confusion, health_confusion, lift_percent, ClassMetrics,
    HealthConfusion,
};
pub use iou::{box_iou, mask_iou, rasterize_polygon};
pub use matching::{cap_detections, match_detections, MatchPair, MatchResult};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco::BBox;

/// Confidence floor applied before confusion-matrix reporting.
pub const DEFAULT_CONFIDENCE: f64 = 0.9;
/// Expected upper bound on crossarms per image.
pub const DEFAULT_MAX_PER_IMAGE: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("degenerate box {0:?}")]
    DegenerateBox(BBox),
    #[error("raster dimensions must be nonzero")]
    ZeroDims,
    #[error("inputs span multiple images ({0} and {1})")]
    MixedImages(u64, u64),
    #[error("unknown category {0}")]
    UnknownCategory(u64),
    #[error("baseline metric must be positive")]
    ZeroBaseline,
    #[error("no dimensions for image {0}")]
    MissingDims(u64),
    #[error("IoU threshold {0} outside (0, 1]")]
    BadThreshold(f64),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// A predicted instance. Serialized in the COCO results convention, with the
/// confidence under `score`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Vec<Vec<f64>>>,
    #[serde(rename = "score")]
    pub confidence: f64,
}

impl Detection {
    pub fn region(&self) -> Vec<Vec<f64>> {
        match &self.segmentation {
            Some(s) if !s.is_empty() => s.clone(),
            _ => vec![self.bbox.to_ring()],
        }
    }
}

/// Region comparison used when scoring one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    Box,
    Mask { width: u32, height: u32 },
}

/// Region comparison used across a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Box,
    Mask,
}

impl std::str::FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "box" => Ok(EvalMode::Box),
            "mask" => Ok(EvalMode::Mask),
            other => Err(format!("unknown mode `{other}` (expected box|mask)")),
        }
    }
}

/// Image id -> `(width, height)`; only consulted in mask mode.
pub type ImageDims = HashMap<u64, (u32, u32)>;

impl EvalMode {
    pub(crate) fn for_image(self, image_id: u64, dims: &ImageDims) -> Result<MatchMode> {
        match self {
            EvalMode::Box => Ok(MatchMode::Box),
            EvalMode::Mask => {
                let &(width, height) = dims.get(&image_id).ok_or(MetricsError::MissingDims(image_id))?;
                Ok(MatchMode::Mask { width, height })
            }
        }
    }
}
