//! Reference computations built from the definitions alone.

use std::ops::RangeInclusive;

use polescan_core::coco::{BBox, InstanceAnnotation};
use polescan_core::metrics::Detection;
use polescan_core::tracker::{LifecycleState, TransitionEvent};

#[derive(Debug, Clone, Copy)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn ring(&self) -> Vec<f64> {
        let (x1, y1) = (self.x + self.w, self.y + self.h);
        vec![self.x, self.y, x1, self.y, x1, y1, self.x, y1]
    }
}

impl From<&BBox> for Rect {
    fn from(b: &BBox) -> Self {
        Rect { x: b.x, y: b.y, w: b.w, h: b.h }
    }
}

pub fn area_iou(a: &Rect, b: &Rect) -> f64 {
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = a.w * a.h + b.w * b.h - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Detection indices by descending confidence; equal confidences keep input order.
fn ranked(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    order
}

/// True-positive flag per ranked detection. Each detection claims the
/// unclaimed ground truth of its image with the highest IoU at or above `t`.
fn greedy_flags(dets: &[Detection], gts: &[InstanceAnnotation], t: f64) -> Vec<bool> {
    let mut claimed = vec![false; gts.len()];
    ranked(dets)
        .into_iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if claimed[g] || gt.image_id != dets[d].image_id {
                    continue;
                }
                let iou = area_iou(&Rect::from(&dets[d].bbox), &Rect::from(&gt.bbox));
                if iou >= t && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                claimed[g] = true;
            }
            best.is_some()
        })
        .collect()
}

/// 101-point interpolated average precision at IoU threshold `t`.
pub fn ref_ap(dets: &[Detection], gts: &[InstanceAnnotation], t: f64) -> f64 {
    let n_gt = gts.len();
    if n_gt == 0 {
        return if dets.is_empty() { 1.0 } else { 0.0 };
    }
    let flags = greedy_flags(dets, gts, t);
    let mut points = Vec::with_capacity(flags.len());
    let mut tp = 0;
    for (k, &hit) in flags.iter().enumerate() {
        tp += usize::from(hit);
        points.push((tp, tp as f64 / (k + 1) as f64));
    }
    let mut sum = 0.0;
    for i in 0..=100 {
        let best = points
            .iter()
            .filter(|&&(tp, _)| tp * 100 >= i * n_gt)
            .map(|&(_, p)| p)
            .fold(0.0, f64::max);
        sum += best;
    }
    sum / 101.0
}

/// Per-image F1 at IoU 0.5 equals 1: every detection and every ground truth
/// is matched.
pub fn perfect_at_half(dets: &[Detection], gts: &[InstanceAnnotation]) -> bool {
    let same_image: Vec<InstanceAnnotation> = gts
        .iter()
        .map(|g| InstanceAnnotation { image_id: 0, ..g.clone() })
        .collect();
    let dets: Vec<Detection> = dets.iter().map(|d| Detection { image_id: 0, ..d.clone() }).collect();
    let tp = greedy_flags(&dets, &same_image, 0.5).iter().filter(|&&f| f).count();
    tp == dets.len() && tp == gts.len()
}

/// Pixels whose centers fall inside the polygons under the even-odd rule.
pub fn rasterize_centers(rings: &[Vec<f64>], w: u32, h: u32) -> Vec<bool> {
    let mut out = vec![false; (w * h) as usize];
    for py in 0..h {
        for px in 0..w {
            let (cx, cy) = (f64::from(px) + 0.5, f64::from(py) + 0.5);
            let mut inside = false;
            for ring in rings {
                let n = ring.len() / 2;
                for i in 0..n {
                    let (x0, y0) = (ring[2 * i], ring[2 * i + 1]);
                    let j = (i + 1) % n;
                    let (x1, y1) = (ring[2 * j], ring[2 * j + 1]);
                    if (y0 > cy) != (y1 > cy) && cx < x0 + (cy - y0) * (x1 - x0) / (y1 - y0) {
                        inside = !inside;
                    }
                }
            }
            out[(py * w + px) as usize] = inside;
        }
    }
    out
}

pub fn pixel_iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// `num / den` in basis points, rounded half up, equals `target`.
pub fn ratio_rounds_to(num: u64, den: u64, target: u64) -> bool {
    den > 0 && (20_000 * num + den) / (2 * den) == target
}

fn widen(lo: f64, hi: f64) -> RangeInclusive<u64> {
    (lo.floor().max(0.0) as u64).saturating_sub(1)..=(hi.ceil() as u64 + 1)
}

/// Every `c` with `n / (n + c)` rounding to `target` basis points.
pub fn complement_range(n: u64, target: u64) -> impl Iterator<Item = u64> {
    let (lo_q, hi_q) = ((target as f64 - 0.5) / 1e4, (target as f64 + 0.5) / 1e4);
    let nf = n as f64;
    widen(nf / hi_q - nf, nf / lo_q - nf).filter(move |&c| ratio_rounds_to(n, n + c, target))
}

/// Every `n` with `n / (n + c)` rounding to `target` basis points.
pub fn numerator_range(c: u64, target: u64) -> impl Iterator<Item = u64> {
    let (lo_q, hi_q) = ((target as f64 - 0.5) / 1e4, (target as f64 + 0.5) / 1e4);
    let cf = c as f64;
    widen(cf * lo_q / (1.0 - lo_q), cf * hi_q / (1.0 - hi_q)).filter(move |&n| n > 0 && ratio_rounds_to(n, n + c, target))
}

fn legal(from: LifecycleState, to: LifecycleState) -> bool {
    use LifecycleState::*;
    let edges: &[(LifecycleState, LifecycleState)] = &[
        (Incoming, BatchPrediction),
        (Incoming, Labeling),
        (BatchPrediction, Verification),
        (Verification, Verified),
        (Verification, Staging),
        (Staging, Labeling),
        (Labeling, TrainingPool),
    ];
    edges.contains(&(from, to)) || (to == Archived && from != Archived)
}

/// Replays one image's events; the final state and version of a legal,
/// gap-free chain that starts with a creation event.
pub fn chain_is_legal(events: &[TransitionEvent]) -> Result<(LifecycleState, u64), String> {
    let (first, rest) = events.split_first().ok_or("empty history")?;
    if (first.from, first.to, first.version_after) != (LifecycleState::Incoming, LifecycleState::Incoming, 0) {
        return Err(format!("history does not start with creation: {first:?}"));
    }
    let mut cur = (LifecycleState::Incoming, 0);
    for e in rest {
        if e.from != cur.0 {
            return Err(format!("event leaves {:?} while in {:?}", e.from, cur.0));
        }
        if e.version_after != cur.1 + 1 {
            return Err(format!("version jumps from {} to {}", cur.1, e.version_after));
        }
        if !legal(e.from, e.to) {
            return Err(format!("illegal edge {:?} -> {:?}", e.from, e.to));
        }
        cur = (e.to, e.version_after);
    }
    Ok(cur)
}
