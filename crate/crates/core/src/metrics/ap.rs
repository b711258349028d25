use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matching::{by_confidence, cap_detections, check_threshold, greedy, iou_matrix};
use super::{Detection, EvalMode, ImageDims, Result};
use crate::coco::InstanceAnnotation;

/// `0.50, 0.55, ..., 0.95`
pub const IOU_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

const RECALL_POINTS: usize = 101;
const CONFIDENCE_STEPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IouAp {
    pub iou_threshold: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Point {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub num_detections: usize,
    pub num_ground_truth: usize,
    pub ap_per_iou: Vec<IouAp>,
    pub ap50: f64,
    pub ap75: f64,
    pub map_50_95: f64,
    pub f1_curve: Vec<F1Point>,
    pub optimal_threshold: f64,
}

impl EvalReport {
    pub fn ap_at(&self, iou_threshold: f64) -> Option<f64> {
        self.ap_per_iou
            .iter()
            .find(|e| e.iou_threshold == iou_threshold)
            .map(|e| e.ap)
    }

    pub fn best_f1(&self) -> f64 {
        self.f1_curve.iter().map(|p| p.f1).fold(0.0, f64::max)
    }

    /// The F1 curve as CSV: `threshold,precision,recall,f1`.
    pub fn f1_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall,f1\n");
        for p in &self.f1_curve {
            out.push_str(&format!("{:.2},{:.6},{:.6},{:.6}\n", p.threshold, p.precision, p.recall, p.f1));
        }
        out
    }
}

/// Per-image detections, ground truths and their IoU matrix.
struct ImageEval {
    /// global detection index per row
    det_index: Vec<usize>,
    confidence: Vec<f64>,
    /// rows in processing order
    order: Vec<usize>,
    ious: Vec<Vec<f64>>,
    n_gt: usize,
}

impl ImageEval {
    fn true_positives(&self, threshold: f64) -> Vec<bool> {
        let assignment = greedy(&self.order, &self.ious, self.n_gt, threshold);
        assignment.iter().map(Option::is_some).collect()
    }
}

struct Corpus {
    images: Vec<ImageEval>,
    n_det: usize,
    n_gt: usize,
}

impl Corpus {
    fn build(dets: &[Detection], gts: &[InstanceAnnotation], mode: EvalMode, dims: &ImageDims) -> Result<Self> {
        let mut grouped: BTreeMap<u64, (Vec<usize>, Vec<&InstanceAnnotation>)> = BTreeMap::new();
        for (i, d) in dets.iter().enumerate() {
            grouped.entry(d.image_id).or_default().0.push(i);
        }
        for g in gts {
            grouped.entry(g.image_id).or_default().1.push(g);
        }
        let groups: Vec<_> = grouped.into_iter().collect();
        let images = groups
            .par_iter()
            .map(|(image_id, (det_index, image_gts))| {
                let mode = mode.for_image(*image_id, dims)?;
                let det_refs: Vec<&Detection> = det_index.iter().map(|&i| &dets[i]).collect();
                let ious = iou_matrix(&det_refs, image_gts, mode)?;
                let confidence: Vec<f64> = det_refs.iter().map(|d| d.confidence).collect();
                let mut order: Vec<usize> = (0..det_index.len()).collect();
                order.sort_by(|&a, &b| by_confidence((confidence[a], det_index[a]), (confidence[b], det_index[b])));
                Ok(ImageEval {
                    det_index: det_index.clone(),
                    confidence,
                    order,
                    ious,
                    n_gt: image_gts.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            images,
            n_det: dets.len(),
            n_gt: gts.len(),
        })
    }

    fn average_precision(&self, threshold: f64) -> f64 {
        if self.n_gt == 0 {
            return if self.n_det == 0 { 1.0 } else { 0.0 };
        }
        let mut scored: Vec<(f64, usize, bool)> = Vec::with_capacity(self.n_det);
        for img in &self.images {
            let tp = img.true_positives(threshold);
            for (row, &hit) in tp.iter().enumerate() {
                scored.push((img.confidence[row], img.det_index[row], hit));
            }
        }
        scored.sort_by(|a, b| by_confidence((a.0, a.1), (b.0, b.1)));
        interpolated_ap(&scored.iter().map(|s| s.2).collect::<Vec<_>>(), self.n_gt)
    }

    fn f1_sweep(&self, threshold: f64) -> (Vec<F1Point>, f64) {
        let mut curve = Vec::with_capacity(CONFIDENCE_STEPS + 1);
        for step in 0..=CONFIDENCE_STEPS {
            let t = step as f64 / CONFIDENCE_STEPS as f64;
            let (mut kept, mut tp) = (0usize, 0usize);
            for img in &self.images {
                let prefix: Vec<usize> = img
                    .order
                    .iter()
                    .copied()
                    .take_while(|&r| img.confidence[r] >= t)
                    .collect();
                kept += prefix.len();
                tp += greedy(&prefix, &img.ious, img.n_gt, threshold)
                    .iter()
                    .filter(|m| m.is_some())
                    .count();
            }
            let precision = ratio(tp, kept);
            let recall = ratio(tp, self.n_gt);
            curve.push(F1Point {
                threshold: t,
                precision,
                recall,
                f1: f1(precision, recall),
            });
        }
        // largest threshold attaining the maximum
        let best = curve.iter().map(|p| p.f1).fold(f64::NEG_INFINITY, f64::max);
        let optimal = curve
            .iter()
            .rev()
            .find(|p| p.f1 == best)
            .map(|p| p.threshold)
            .unwrap_or(1.0);
        (curve, optimal)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub(crate) fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// 101-point interpolated AP over a ranked TP/FP sequence.
fn interpolated_ap(hits: &[bool], n_gt: usize) -> f64 {
    let mut tps = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &hit) in hits.iter().enumerate() {
        tp += usize::from(hit);
        tps.push(tp);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut sum = 0.0;
    for i in 0..RECALL_POINTS {
        // first rank whose recall reaches i/100, compared in integers
        let k = tps.partition_point(|&t| t * 100 < i * n_gt);
        if k < precision.len() {
            sum += precision[k];
        }
    }
    sum / RECALL_POINTS as f64
}

pub fn average_precision(
    dets: &[Detection],
    gts: &[InstanceAnnotation],
    iou_threshold: f64,
    max_per_image: Option<usize>,
    mode: EvalMode,
    dims: &ImageDims,
) -> Result<f64> {
    check_threshold(iou_threshold)?;
    let capped;
    let dets = match max_per_image {
        Some(k) => {
            capped = cap_detections(dets, k);
            &capped[..]
        }
        None => dets,
    };
    Ok(Corpus::build(dets, gts, mode, dims)?.average_precision(iou_threshold))
}

pub fn f1_confidence_sweep(
    dets: &[Detection],
    gts: &[InstanceAnnotation],
    iou_threshold: f64,
    mode: EvalMode,
    dims: &ImageDims,
) -> Result<(Vec<F1Point>, f64)> {
    check_threshold(iou_threshold)?;
    Ok(Corpus::build(dets, gts, mode, dims)?.f1_sweep(iou_threshold))
}

pub fn mean_average_precision(
    dets: &[Detection],
    gts: &[InstanceAnnotation],
    mode: EvalMode,
    dims: &ImageDims,
) -> Result<EvalReport> {
    let corpus = Corpus::build(dets, gts, mode, dims)?;
    let ap_per_iou: Vec<IouAp> = IOU_THRESHOLDS
        .iter()
        .map(|&t| IouAp {
            iou_threshold: t,
            ap: corpus.average_precision(t),
        })
        .collect();
    let map_50_95 = ap_per_iou.iter().map(|e| e.ap).sum::<f64>() / ap_per_iou.len() as f64;
    let (f1_curve, optimal_threshold) = corpus.f1_sweep(0.5);
    Ok(EvalReport {
        mode,
        num_detections: dets.len(),
        num_ground_truth: gts.len(),
        ap50: ap_per_iou[0].ap,
        ap75: ap_per_iou[5].ap,
        ap_per_iou,
        map_50_95,
        f1_curve,
        optimal_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coco::BBox;

    fn gt(id: u64, image_id: u64, x: f64) -> InstanceAnnotation {
        InstanceAnnotation {
            id,
            image_id,
            category_id: 1,
            bbox: BBox::new(x, 0.0, 10.0, 10.0),
            segmentation: vec![],
            area: 100.0,
            iscrowd: 0,
        }
    }

    fn det(image_id: u64, x: f64, conf: f64) -> Detection {
        Detection {
            image_id,
            category_id: 1,
            bbox: BBox::new(x, 0.0, 10.0, 10.0),
            segmentation: None,
            confidence: conf,
        }
    }

    fn ap(dets: &[Detection], gts: &[InstanceAnnotation]) -> f64 {
        average_precision(dets, gts, 0.5, None, EvalMode::Box, &ImageDims::new()).unwrap()
    }

    #[test]
    fn two_true_positives() {
        let gts = vec![gt(1, 1, 0.0), gt(2, 1, 50.0)];
        let dets = vec![det(1, 0.0, 0.9), det(1, 50.0, 0.8)];
        assert_eq!(ap(&dets, &gts), 1.0);
    }

    #[test]
    fn tp_fp_tp_sequence() {
        let gts = vec![gt(1, 1, 0.0), gt(2, 1, 50.0)];
        let dets = vec![det(1, 0.0, 0.9), det(1, 200.0, 0.8), det(1, 50.0, 0.7)];
        let expected = (51.0 + 50.0 * (2.0 / 3.0)) / 101.0;
        assert!((ap(&dets, &gts) - expected).abs() < 1e-12);
        assert!((expected - 0.8350).abs() < 5e-5);
    }

    #[test]
    fn empty_cases() {
        assert_eq!(ap(&[], &[gt(1, 1, 0.0)]), 0.0);
        assert_eq!(ap(&[det(1, 0.0, 0.5)], &[]), 0.0);
        assert_eq!(ap(&[], &[]), 1.0);
    }

    #[test]
    fn perfect_detections_give_unit_map() {
        let gts = vec![gt(1, 1, 0.0), gt(2, 2, 30.0)];
        let dets = vec![det(1, 0.0, 1.0), det(2, 30.0, 1.0)];
        let r = mean_average_precision(&dets, &gts, EvalMode::Box, &ImageDims::new()).unwrap();
        assert_eq!(r.map_50_95, 1.0);
        assert!(r.ap_per_iou.iter().all(|e| e.ap == 1.0));
    }

    #[test]
    fn empty_detections_give_zero_report() {
        let r = mean_average_precision(&[], &[gt(1, 1, 0.0)], EvalMode::Box, &ImageDims::new()).unwrap();
        assert_eq!(r.map_50_95, 0.0);
        assert_eq!(r.ap50, 0.0);
        assert!(r.f1_curve.iter().all(|p| p.f1 == 0.0));
        assert_eq!(r.optimal_threshold, 1.0);
    }

    #[test]
    fn sweep_single_tp() {
        let (curve, best) = f1_confidence_sweep(&[det(1, 0.0, 0.95)], &[gt(1, 1, 0.0)], 0.5, EvalMode::Box, &ImageDims::new()).unwrap();
        assert_eq!(curve.len(), 101);
        for p in &curve {
            let expect = if p.threshold <= 0.95 { 1.0 } else { 0.0 };
            assert_eq!(p.f1, expect, "t = {}", p.threshold);
        }
        assert_eq!(best, 0.95);
    }

    #[test]
    fn sweep_tp_plus_low_fp() {
        let dets = vec![det(1, 0.0, 0.95), det(1, 300.0, 0.40)];
        let (curve, best) = f1_confidence_sweep(&dets, &[gt(1, 1, 0.0)], 0.5, EvalMode::Box, &ImageDims::new()).unwrap();
        assert!((curve[40].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(curve[41].f1, 1.0);
        assert_eq!(best, 0.95);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let r = mean_average_precision(&[], &[], EvalMode::Box, &ImageDims::new()).unwrap();
        let csv = r.f1_csv();
        assert!(csv.starts_with("threshold,precision,recall,f1\n0.00,"));
        assert_eq!(csv.lines().count(), 102);
    }
}
