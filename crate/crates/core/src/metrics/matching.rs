use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{box_iou, mask_iou, Detection, MatchMode, MetricsError, Result};
use crate::coco::InstanceAnnotation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub detection: usize,
    pub ground_truth: usize,
    pub iou: f64,
}

/// One-to-one assignment between detections and ground truths of one image.
/// Indices refer to the input slices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_ground_truth: Vec<usize>,
}

/// Descending confidence, lower index first on ties.
pub(crate) fn by_confidence(a: (f64, usize), b: (f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// IoU of every (detection, ground truth) pair, `[det][gt]`.
pub(crate) fn iou_matrix(
    dets: &[&Detection],
    gts: &[&InstanceAnnotation],
    mode: MatchMode,
) -> Result<Vec<Vec<f64>>> {
    match mode {
        MatchMode::Box => dets
            .iter()
            .map(|d| gts.iter().map(|g| box_iou(&d.bbox, &g.bbox)).collect())
            .collect(),
        MatchMode::Mask { width, height } => {
            let gt_regions: Vec<_> = gts.iter().map(|g| g.region()).collect();
            dets.iter()
                .map(|d| {
                    let dr = d.region();
                    gt_regions
                        .iter()
                        .map(|gr| mask_iou(&dr, gr, width, height))
                        .collect()
                })
                .collect()
        }
    }
}

/// Greedy assignment. `order` lists detection rows in processing order; the
/// result maps each row to its matched column and IoU.
pub(crate) fn greedy(order: &[usize], ious: &[Vec<f64>], n_gt: usize, threshold: f64) -> Vec<Option<(usize, f64)>> {
    let mut taken = vec![false; n_gt];
    let mut out = vec![None; ious.len()];
    for &d in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, &iou) in ious[d].iter().enumerate() {
            if taken[g] || iou < threshold {
                continue;
            }
            // strict > keeps the lower index on ties
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, iou)) = best {
            taken[g] = true;
            out[d] = Some((g, iou));
        }
    }
    out
}

pub(crate) fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(MetricsError::BadThreshold(t))
    }
}

pub fn match_detections(
    dets: &[Detection],
    gts: &[InstanceAnnotation],
    iou_threshold: f64,
    mode: MatchMode,
) -> Result<MatchResult> {
    check_threshold(iou_threshold)?;
    let mut ids = dets.iter().map(|d| d.image_id).chain(gts.iter().map(|g| g.image_id));
    if let Some(first) = ids.next() {
        if let Some(other) = ids.find(|&i| i != first) {
            return Err(MetricsError::MixedImages(first, other));
        }
    }
    let det_refs: Vec<_> = dets.iter().collect();
    let gt_refs: Vec<_> = gts.iter().collect();
    let ious = iou_matrix(&det_refs, &gt_refs, mode)?;
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| by_confidence((dets[a].confidence, a), (dets[b].confidence, b)));
    let assignment = greedy(&order, &ious, gts.len(), iou_threshold);

    let mut result = MatchResult::default();
    let mut gt_used = vec![false; gts.len()];
    for &d in &order {
        match assignment[d] {
            Some((g, iou)) => {
                gt_used[g] = true;
                result.pairs.push(MatchPair {
                    detection: d,
                    ground_truth: g,
                    iou,
                });
            }
            None => result.unmatched_detections.push(d),
        }
    }
    result.unmatched_detections.sort_unstable();
    result.unmatched_ground_truth = (0..gts.len()).filter(|&g| !gt_used[g]).collect();
    Ok(result)
}

/// Keeps the `max_per_image` most confident detections of each image
/// (lower index wins ties). Survivors keep their input order.
pub fn cap_detections(dets: &[Detection], max_per_image: usize) -> Vec<Detection> {
    let mut per_image: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, d) in dets.iter().enumerate() {
        per_image.entry(d.image_id).or_default().push(i);
    }
    let mut keep = vec![false; dets.len()];
    for idx in per_image.values_mut() {
        idx.sort_by(|&a, &b| by_confidence((dets[a].confidence, a), (dets[b].confidence, b)));
        for &i in idx.iter().take(max_per_image) {
            keep[i] = true;
        }
    }
    dets.iter()
        .zip(keep)
        .filter(|&(_, k)| k)
        .map(|(d, _)| d.clone())
        .collect()
}
