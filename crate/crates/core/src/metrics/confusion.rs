use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::ap::f1;
use super::{match_detections, Detection, EvalMode, ImageDims, MatchResult, MetricsError, Result};
use crate::coco::{CategorySpec, Health, InstanceAnnotation};

/// 2x2 health matrix over matched pairs, plus unmatched counts kept outside
/// the matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HealthConfusion {
    pub true_healthy: u64,
    /// actual healthy, predicted defective
    pub false_defective: u64,
    /// actual defective, predicted healthy
    pub false_healthy: u64,
    pub true_defective: u64,
    pub unmatched_detections: u64,
    pub unmatched_ground_truth: u64,
}

impl HealthConfusion {
    pub fn from_cells(true_healthy: u64, false_defective: u64, false_healthy: u64, true_defective: u64) -> Self {
        Self {
            true_healthy,
            false_defective,
            false_healthy,
            true_defective,
            ..Self::default()
        }
    }

    pub fn matched(&self) -> u64 {
        self.true_healthy + self.false_defective + self.false_healthy + self.true_defective
    }

    fn add(&mut self, other: &HealthConfusion) {
        self.true_healthy += other.true_healthy;
        self.false_defective += other.false_defective;
        self.false_healthy += other.false_healthy;
        self.true_defective += other.true_defective;
        self.unmatched_detections += other.unmatched_detections;
        self.unmatched_ground_truth += other.unmatched_ground_truth;
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision_healthy: f64,
    pub recall_healthy: f64,
    pub precision_defective: f64,
    pub recall_defective: f64,
    pub f1_healthy: f64,
    pub f1_defective: f64,
    /// Names of ratios whose denominator was zero (reported as 0).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<String>,
}

pub fn health_confusion(
    matched: &MatchResult,
    dets: &[Detection],
    gts: &[InstanceAnnotation],
    categories: &[CategorySpec],
) -> Result<HealthConfusion> {
    let health: HashMap<u64, Health> = categories.iter().map(|c| (c.id, c.health)).collect();
    let lookup = |id: u64| health.get(&id).copied().ok_or(MetricsError::UnknownCategory(id));

    let mut cm = HealthConfusion {
        unmatched_detections: matched.unmatched_detections.len() as u64,
        unmatched_ground_truth: matched.unmatched_ground_truth.len() as u64,
        ..HealthConfusion::default()
    };
    for p in &matched.pairs {
        let actual = lookup(gts[p.ground_truth].category_id)?;
        let predicted = lookup(dets[p.detection].category_id)?;
        match (actual, predicted) {
            (Health::Healthy, Health::Healthy) => cm.true_healthy += 1,
            (Health::Healthy, Health::Defective) => cm.false_defective += 1,
            (Health::Defective, Health::Healthy) => cm.false_healthy += 1,
            (Health::Defective, Health::Defective) => cm.true_defective += 1,
        }
    }
    Ok(cm)
}

/// Sums per-image confusion over a corpus after dropping detections below
/// `min_confidence`.
pub fn corpus_confusion(
    dets: &[Detection],
    gts: &[InstanceAnnotation],
    categories: &[CategorySpec],
    iou_threshold: f64,
    min_confidence: f64,
    mode: EvalMode,
    dims: &ImageDims,
) -> Result<HealthConfusion> {
    let mut grouped: BTreeMap<u64, (Vec<Detection>, Vec<InstanceAnnotation>)> = BTreeMap::new();
    for d in dets.iter().filter(|d| d.confidence >= min_confidence) {
        grouped.entry(d.image_id).or_default().0.push(d.clone());
    }
    for g in gts {
        grouped.entry(g.image_id).or_default().1.push(g.clone());
    }
    let mut total = HealthConfusion::default();
    for (image_id, (d, g)) in &grouped {
        let m = match_detections(d, g, iou_threshold, mode.for_image(*image_id, dims)?)?;
        total.add(&health_confusion(&m, d, g, categories)?);
    }
    Ok(total)
}

pub fn class_metrics(cm: &HealthConfusion) -> ClassMetrics {
    let mut degenerate = Vec::new();
    let mut ratio = |name: &str, num: u64, den: u64| {
        if den == 0 {
            degenerate.push(name.to_string());
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision_healthy = ratio("precision_healthy", cm.true_healthy, cm.true_healthy + cm.false_healthy);
    let recall_healthy = ratio("recall_healthy", cm.true_healthy, cm.true_healthy + cm.false_defective);
    let precision_defective = ratio("precision_defective", cm.true_defective, cm.true_defective + cm.false_defective);
    let recall_defective = ratio("recall_defective", cm.true_defective, cm.true_defective + cm.false_healthy);
    ClassMetrics {
        precision_healthy,
        recall_healthy,
        precision_defective,
        recall_defective,
        f1_healthy: f1(precision_healthy, recall_healthy),
        f1_defective: f1(precision_defective, recall_defective),
        degenerate,
    }
}

/// Percent change of `candidate` over `baseline`, rounded to two decimals.
pub fn lift_percent(baseline: f64, candidate: f64) -> Result<f64> {
    if baseline.is_nan() || baseline <= 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    let raw = 100.0 * (candidate - baseline) / baseline;
    Ok((raw * 100.0).round() / 100.0)
}
