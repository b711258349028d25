use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GenConfig, Range, Result, SynthError};
use crate::coco::DefectType;
use crate::rng;

pub(crate) const RNG_DOMAIN: &str = "polescan.synthgen.v1";

/// At the nearest configured distance the unforeshortened arm spans this
/// fraction of the short image side.
const ARM_SPAN_AT_NEAR: f64 = 0.75;
const ARM_THICKNESS_RATIO: f64 = 0.07;
const POLE_WIDTH_RATIO: f64 = 0.055;
const MAX_ROLL_DEG: f64 = 15.0;
const MARGIN_PX: f64 = 2.0;
const MIN_THICKNESS_PX: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lighting {
    pub sun_elevation_deg: f64,
    pub intensity: f64,
}

impl Lighting {
    /// Multiplier applied to every flat color.
    pub fn shade(&self) -> f64 {
        let sun = self.sun_elevation_deg.to_radians().sin();
        (0.35 + 0.65 * self.intensity * (0.55 + 0.45 * sun)).clamp(0.0, 1.0)
    }
}

/// Arm placement in image pixels after projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub center: [f64; 2],
    pub roll_deg: f64,
    pub arm_length: f64,
    pub arm_thickness: f64,
    pub pole_width: f64,
    /// Row of the sky/ground boundary; may lie outside the frame.
    pub horizon_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub kind: DefectType,
    pub severity: f64,
    pub location: f64,
    /// Seeds irregular outlines (decay blotches).
    pub shape_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Rect,
    Ellipse,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub shape: Shape,
    pub center: [f64; 2],
    pub size: f64,
    pub rotation_deg: f64,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub master_seed: u64,
    pub index: u64,
    /// Per-scene seed derived from `(master_seed, index)`.
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub camera: Camera,
    pub lighting: Lighting,
    pub pose: Pose,
    pub arm_color: [u8; 3],
    pub defect: Option<DefectSpec>,
    pub distractors: Vec<Distractor>,
}

fn draw(rng: &mut impl Rng, r: Range) -> f64 {
    if r.hi > r.lo {
        rng.random_range(r.lo..r.hi)
    } else {
        r.lo
    }
}

pub fn sample_scene(master_seed: u64, index: u64, cfg: &GenConfig) -> Result<SceneSpec> {
    cfg.validate()?;
    if index >= cfg.n_images {
        return Err(SynthError::BadConfig(format!(
            "index {index} out of range for n_images {}",
            cfg.n_images
        )));
    }
    let stream = |tag: &str| rng::keyed(RNG_DOMAIN, master_seed, index, tag);
    let (w, h) = (f64::from(cfg.image_width), f64::from(cfg.image_height));

    let mut r = stream("camera");
    let camera = Camera {
        azimuth_deg: draw(&mut r, cfg.camera.azimuth_deg),
        elevation_deg: draw(&mut r, cfg.camera.elevation_deg),
        distance: draw(&mut r, cfg.camera.distance),
    };

    let mut r = stream("lighting");
    let lighting = Lighting {
        sun_elevation_deg: draw(&mut r, cfg.lighting.sun_elevation_deg),
        intensity: draw(&mut r, cfg.lighting.intensity),
    };

    // projection of the canonical model
    let short = w.min(h);
    let base = ARM_SPAN_AT_NEAR * short * cfg.camera.distance.lo / camera.distance;
    let az = camera.azimuth_deg.to_radians();
    let el = camera.elevation_deg.to_radians();
    let mut arm_length = base * (0.3 + 0.7 * az.cos().abs());
    let arm_thickness = (base * ARM_THICKNESS_RATIO * (0.6 + 0.4 * el.sin())).max(MIN_THICKNESS_PX);
    let pole_width = (base * POLE_WIDTH_RATIO).max(MIN_THICKNESS_PX - 1.0);
    let horizon_y = h * (0.65 - 0.8 * (camera.elevation_deg - 10.0) / 70.0);

    let mut r = stream("pose");
    let roll_deg = r.random_range(-MAX_ROLL_DEG..=MAX_ROLL_DEG);
    let (s, c) = roll_deg.to_radians().sin_cos();
    let half_extent = |len: f64| {
        (
            (len / 2.0 * c).abs() + (arm_thickness / 2.0 * s).abs(),
            (len / 2.0 * s).abs() + (arm_thickness / 2.0 * c).abs(),
        )
    };
    let (mut hx, mut hy) = half_extent(arm_length);
    let fit = (w / 2.0 - MARGIN_PX) / hx;
    if fit < 1.0 {
        arm_length *= fit * 0.98;
        (hx, hy) = half_extent(arm_length);
    }
    let cx = draw(&mut r, Range::new(hx + MARGIN_PX, w - hx - MARGIN_PX));
    let cy_hi = (h * 0.6).max(hy + MARGIN_PX);
    let cy = draw(&mut r, Range::new(hy + MARGIN_PX, cy_hi.min(h - hy - MARGIN_PX)));
    let pose = Pose {
        center: [cx, cy],
        roll_deg,
        arm_length,
        arm_thickness,
        pole_width,
        horizon_y,
    };

    let mut r = stream("cosmetic");
    let jitter = |r: &mut rand_chacha::ChaCha8Rng, base: u8| -> u8 {
        (i32::from(base) + r.random_range(-18..=18)).clamp(0, 255) as u8
    };
    let arm_color = [jitter(&mut r, 128), jitter(&mut r, 88), jitter(&mut r, 52)];

    let mut r = stream("defect");
    let u: f64 = r.random();
    let defect = cfg.defect_mix.pick(u).map(|kind| DefectSpec {
        kind,
        severity: draw(&mut r, cfg.severity),
        location: r.random_range(0.15..=0.85),
        shape_seed: r.random(),
    });

    let mut r = stream("distractors");
    let n = r.random_range(0..=cfg.max_distractors);
    let distractors = (0..n)
        .map(|_| Distractor {
            shape: match r.random_range(0..3) {
                0 => Shape::Rect,
                1 => Shape::Ellipse,
                _ => Shape::Triangle,
            },
            center: [r.random_range(0.0..w), r.random_range(0.0..h)],
            size: r.random_range(0.02..0.12) * short,
            rotation_deg: r.random_range(0.0..180.0),
            color: [r.random(), r.random(), r.random()],
        })
        .collect();

    Ok(SceneSpec {
        master_seed,
        index,
        seed: rng::hash64(&[RNG_DOMAIN.as_bytes(), &master_seed.to_le_bytes(), &index.to_le_bytes()]),
        width: cfg.image_width,
        height: cfg.image_height,
        camera,
        lighting,
        pose,
        arm_color,
        defect,
        distractors,
    })
}
