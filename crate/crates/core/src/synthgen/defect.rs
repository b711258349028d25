//! Defect geometry on a straight arm.
//!
//! All laws are linear in severity `s`, in arm-local coordinates where the
//! arm spans `[-L/2, L/2]` along its axis and `[-T/2, T/2]` across it:
//!
//! - split: a diamond crack on the axis, length `s * 0.45 L`, width `0.35 T`
//! - break: a full-thickness gap of width `s * 0.2 L`; the arm becomes two
//!   segments, each at least `0.05 L` long
//! - decay: an irregular 12-gon inside the ellipse with semi-axes
//!   `sqrt(s) * (0.12 L, 0.42 T)`, so its area is proportional to `s`
//!
//! The defect center sits at `-L/2 + location * L`, pulled inward just enough
//! for the defect to fit on the arm.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::{DefectSpec, RNG_DOMAIN};
use super::{Result, SynthError};
use crate::coco::DefectType;
use crate::rng;

pub const SPLIT_MAX_LENGTH: f64 = 0.45;
pub const SPLIT_WIDTH: f64 = 0.35;
pub const BREAK_MAX_GAP: f64 = 0.2;
pub const BREAK_MIN_SEGMENT: f64 = 0.05;
pub const DECAY_SEMI_AXIS_LENGTH: f64 = 0.12;
pub const DECAY_SEMI_AXIS_THICKNESS: f64 = 0.42;
const DECAY_VERTICES: usize = 12;

/// A straight rectangular arm in image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmGeometry {
    pub center: [f64; 2],
    pub length: f64,
    pub thickness: f64,
    pub angle_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectGeometry {
    /// One ring for an intact arm, two for a broken one.
    pub arm_rings: Vec<Vec<f64>>,
    /// Empty when the defect has zero severity.
    pub defect_ring: Vec<f64>,
}

impl ArmGeometry {
    /// Maps arm-local `(u, v)` to image coordinates, rounded to 1/100 px so
    /// emitted polygons do not depend on float evaluation order downstream.
    pub fn to_image(&self, u: f64, v: f64) -> [f64; 2] {
        let (s, c) = self.angle_rad.sin_cos();
        let x = self.center[0] + u * c - v * s;
        let y = self.center[1] + u * s + v * c;
        [quantize(x), quantize(y)]
    }

    fn ring(&self, local: &[(f64, f64)]) -> Vec<f64> {
        local.iter().flat_map(|&(u, v)| self.to_image(u, v)).collect()
    }

    fn segment(&self, u0: f64, u1: f64) -> Vec<f64> {
        let t = self.thickness / 2.0;
        self.ring(&[(u0, -t), (u1, -t), (u1, t), (u0, t)])
    }

    pub fn outline(&self) -> Vec<f64> {
        self.segment(-self.length / 2.0, self.length / 2.0)
    }
}

fn quantize(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn place(length: f64, location: f64, half_span: f64) -> f64 {
    let c = -length / 2.0 + location * length;
    let limit = (length / 2.0 - half_span).max(0.0);
    c.clamp(-limit, limit)
}

pub fn inject_defect(arm: &ArmGeometry, defect: &DefectSpec) -> Result<DefectGeometry> {
    let s = defect.severity;
    if !(0.0..=1.0).contains(&s) {
        return Err(SynthError::BadSeverity(s));
    }
    if !(0.0..=1.0).contains(&defect.location) {
        return Err(SynthError::BadSeverity(defect.location));
    }
    let (l, t) = (arm.length, arm.thickness);
    if s == 0.0 {
        return Ok(DefectGeometry {
            arm_rings: vec![arm.outline()],
            defect_ring: Vec::new(),
        });
    }
    Ok(match defect.kind {
        DefectType::Split => {
            let len = s * SPLIT_MAX_LENGTH * l;
            let half_w = SPLIT_WIDTH * t / 2.0;
            let c = place(l, defect.location, len / 2.0);
            DefectGeometry {
                arm_rings: vec![arm.outline()],
                defect_ring: arm.ring(&[(c - len / 2.0, 0.0), (c, -half_w), (c + len / 2.0, 0.0), (c, half_w)]),
            }
        }
        DefectType::Break => {
            let gap = s * BREAK_MAX_GAP * l;
            let c = place(l, defect.location, gap / 2.0 + BREAK_MIN_SEGMENT * l);
            let (g0, g1) = (c - gap / 2.0, c + gap / 2.0);
            let h = t / 2.0;
            DefectGeometry {
                arm_rings: vec![arm.segment(-l / 2.0, g0), arm.segment(g1, l / 2.0)],
                defect_ring: arm.ring(&[(g0, -h), (g1, -h), (g1, h), (g0, h)]),
            }
        }
        DefectType::Decay => {
            let k = s.sqrt();
            let (rx, ry) = (k * DECAY_SEMI_AXIS_LENGTH * l, k * DECAY_SEMI_AXIS_THICKNESS * t);
            let c = place(l, defect.location, rx);
            let mut r = rng::keyed(RNG_DOMAIN, defect.shape_seed, 0, "decay-outline");
            let local: Vec<(f64, f64)> = (0..DECAY_VERTICES)
                .map(|i| {
                    let m: f64 = r.random_range(0.7..=1.0);
                    let a = std::f64::consts::TAU * i as f64 / DECAY_VERTICES as f64;
                    (c + m * rx * a.cos(), m * ry * a.sin())
                })
                .collect();
            DefectGeometry {
                arm_rings: vec![arm.outline()],
                defect_ring: arm.ring(&local),
            }
        }
    })
}
