use rand::Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{DetectorError, Result};
use crate::coco::{BBox, CategorySpec, DefectType, Health, InstanceAnnotation, HEALTHY_NAME};
use crate::metrics::{box_iou, Detection};
use crate::rng;

const RNG_DOMAIN: &str = "polescan.oracle.v1";
const FP_MIN_AREA: f64 = 0.005;
const FP_MAX_AREA: f64 = 0.05;
const FP_MAX_GT_IOU: f64 = 0.3;
const FP_RESAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

/// Error model of the oracle detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleParams {
    pub miss_rate: f64,
    /// Mean false positives per image (Poisson).
    pub fp_per_image: f64,
    pub box_jitter_sigma: f64,
    pub health_flip_rate: f64,
    pub tp_confidence: BetaParams,
    pub fp_confidence: BetaParams,
    pub seed: u64,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            miss_rate: 0.0,
            fp_per_image: 0.0,
            box_jitter_sigma: 0.0,
            health_flip_rate: 0.0,
            tp_confidence: BetaParams { alpha: 9.0, beta: 1.0 },
            fp_confidence: BetaParams { alpha: 3.0, beta: 7.0 },
            seed: 0,
        }
    }
}

impl OracleParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(DetectorError::BadParams(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("miss_rate", self.miss_rate)?;
        unit("health_flip_rate", self.health_flip_rate)?;
        if !(self.fp_per_image >= 0.0 && self.fp_per_image.is_finite()) {
            return Err(DetectorError::BadParams("fp_per_image must be >= 0".into()));
        }
        if !(self.box_jitter_sigma >= 0.0 && self.box_jitter_sigma.is_finite()) {
            return Err(DetectorError::BadParams("box_jitter_sigma must be >= 0".into()));
        }
        for (name, b) in [("tp_confidence", self.tp_confidence), ("fp_confidence", self.fp_confidence)] {
            if !(b.alpha > 0.0 && b.beta > 0.0) {
                return Err(DetectorError::BadParams(format!("{name} Beta parameters must be > 0")));
            }
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        format!(
            "oracle(miss={}, fp={}, sigma={}, flip={}, seed={})",
            self.miss_rate, self.fp_per_image, self.box_jitter_sigma, self.health_flip_rate, self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutput {
    pub detections: Vec<Detection>,
    /// False positives placed over a ground truth after exhausting resamples.
    pub forced_overlaps: usize,
}

pub fn oracle_detect(
    gts: &[InstanceAnnotation],
    dims: (u32, u32),
    categories: &[CategorySpec],
    params: &OracleParams,
    image_index: u64,
) -> Result<Vec<Detection>> {
    oracle_run(gts, dims, categories, params, image_index).map(|o| o.detections)
}

/// Oracle detections for one image.
///
/// Every ground truth consumes the same draws whatever the rates are, so
/// raising `miss_rate` only removes detections and raising the jitter only
/// scales the same displacement.
pub fn oracle_run(
    gts: &[InstanceAnnotation],
    dims: (u32, u32),
    categories: &[CategorySpec],
    params: &OracleParams,
    image_index: u64,
) -> Result<OracleOutput> {
    params.validate()?;
    let (w, h) = (f64::from(dims.0), f64::from(dims.1));
    let stream = |tag: &str| rng::keyed(RNG_DOMAIN, params.seed, image_index, tag);
    let mut miss = stream("miss");
    let mut jitter = stream("jitter");
    let mut flip = stream("flip");
    let mut conf = stream("tp-confidence");
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let tp_beta = beta(params.tp_confidence)?;

    let healthy_id = categories.iter().find(|c| c.name == HEALTHY_NAME).map(|c| c.id);
    let defect_ids: Vec<(DefectType, u64)> = DefectType::ALL
        .iter()
        .filter_map(|&t| categories.iter().find(|c| c.defect_type == Some(t)).map(|c| (t, c.id)))
        .collect();

    let mut detections = Vec::new();
    for g in gts {
        let u_miss: f64 = miss.random();
        let z: [f64; 4] = std::array::from_fn(|_| normal.sample(&mut jitter));
        let u_flip: f64 = flip.random();
        let u_type: f64 = flip.random();
        let confidence = tp_beta.sample(&mut conf).clamp(0.0, 1.0);
        if u_miss < params.miss_rate {
            continue;
        }

        let s = params.box_jitter_sigma;
        let bbox = clamp_box(
            BBox::new(g.bbox.x + s * z[0], g.bbox.y + s * z[1], g.bbox.w + s * z[2], g.bbox.h + s * z[3]),
            w,
            h,
        );
        let segmentation = (!g.segmentation.is_empty()).then(|| remap(&g.segmentation, &g.bbox, &bbox));

        let mut category_id = g.category_id;
        if u_flip < params.health_flip_rate {
            let health = categories.iter().find(|c| c.id == g.category_id).map(|c| c.health);
            category_id = match health {
                Some(Health::Defective) => healthy_id.unwrap_or(category_id),
                Some(Health::Healthy) if !defect_ids.is_empty() => {
                    let k = ((u_type * defect_ids.len() as f64) as usize).min(defect_ids.len() - 1);
                    defect_ids[k].1
                }
                _ => category_id,
            };
        }
        detections.push(Detection {
            image_id: g.image_id,
            category_id,
            bbox,
            segmentation,
            confidence,
        });
    }

    let mut forced_overlaps = 0;
    if params.fp_per_image > 0.0 {
        let mut r = stream("false-positives");
        let fp_beta = beta(params.fp_confidence)?;
        let poisson = Poisson::new(params.fp_per_image)
            .map_err(|e| DetectorError::BadParams(format!("fp_per_image: {e}")))?;
        let n = poisson.sample(&mut r) as usize;
        let image_id = gts.first().map(|g| g.image_id).unwrap_or(image_index + 1);
        let all_ids: Vec<u64> = categories.iter().map(|c| c.id).collect();
        for _ in 0..n {
            let mut bbox = random_box(&mut r, w, h);
            let mut attempts = 0;
            while overlaps(&bbox, gts) && attempts < FP_RESAMPLES {
                bbox = random_box(&mut r, w, h);
                attempts += 1;
            }
            if overlaps(&bbox, gts) {
                forced_overlaps += 1;
                tracing::debug!(image_index, "false positive placed over a ground truth");
            }
            let category_id = if all_ids.is_empty() {
                0
            } else {
                all_ids[r.random_range(0..all_ids.len())]
            };
            detections.push(Detection {
                image_id,
                category_id,
                bbox,
                segmentation: None,
                confidence: fp_beta.sample(&mut r).clamp(0.0, 1.0),
            });
        }
    }
    Ok(OracleOutput {
        detections,
        forced_overlaps,
    })
}

fn beta(p: BetaParams) -> Result<Beta<f64>> {
    Beta::new(p.alpha, p.beta).map_err(|e| DetectorError::BadParams(e.to_string()))
}

fn overlaps(b: &BBox, gts: &[InstanceAnnotation]) -> bool {
    gts.iter()
        .any(|g| box_iou(b, &g.bbox).map(|v| v > FP_MAX_GT_IOU).unwrap_or(false))
}

fn random_box(r: &mut impl Rng, w: f64, h: f64) -> BBox {
    let area = r.random_range(FP_MIN_AREA..=FP_MAX_AREA) * w * h;
    let aspect: f64 = r.random_range(0.5..=2.0);
    let bw = (area * aspect).sqrt().min(w);
    let bh = (area / bw).min(h);
    let x = r.random_range(0.0..=(w - bw));
    let y = r.random_range(0.0..=(h - bh));
    BBox::new(x, y, bw, bh)
}

fn clamp_box(b: BBox, w: f64, h: f64) -> BBox {
    let x0 = b.x.clamp(0.0, w - 1.0);
    let y0 = b.y.clamp(0.0, h - 1.0);
    let x1 = (b.x + b.w).clamp(x0 + 1.0, w);
    let y1 = (b.y + b.h).clamp(y0 + 1.0, h);
    BBox::new(x0, y0, x1 - x0, y1 - y0)
}

/// Maps rings from one box frame onto another (translate and scale).
fn remap(rings: &[Vec<f64>], from: &BBox, to: &BBox) -> Vec<Vec<f64>> {
    if from == to {
        return rings.to_vec();
    }
    let sx = if from.w > 0.0 { to.w / from.w } else { 1.0 };
    let sy = if from.h > 0.0 { to.h / from.h } else { 1.0 };
    rings
        .iter()
        .map(|ring| {
            ring.chunks_exact(2)
                .flat_map(|p| [to.x + (p[0] - from.x) * sx, to.y + (p[1] - from.y) * sy])
                .collect()
        })
        .collect()
}
