//! Procedural generator of labeled synthetic crossarm scenes.
//!
//! A canonical pole-plus-crossarm model is projected to 2D through a simple
//! parametric camera (azimuth foreshortens the arm, elevation thickens its
//! visible face and moves the horizon, distance scales everything), then
//! flat-shaded under a randomized light level together with up to 50
//! unlabeled distractor shapes. Labels are emitted from the exact polygons
//! that are painted, so annotations and pixels agree.
//!
//! Randomness is keyed per `(master_seed, image index, dimension)`; see
//! [`crate::rng`].

mod batch;
mod defect;
mod render;
mod scene;

pub use batch::{generate_batch, image_file_name, GeneratedBatch, COCO_FILE, IMAGES_DIR, MANIFEST_FILE, SCENES_FILE};
pub use defect::{inject_defect, ArmGeometry, DefectGeometry};
pub use render::{label_fidelity, render_scene, RenderedScene};
pub use scene::{sample_scene, Camera, DefectSpec, Distractor, Lighting, Pose, SceneSpec, Shape};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco::DefectType;

pub const MAX_DISTRACTORS: u32 = 50;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad generator config: {0}")]
    BadConfig(String),
    #[error("severity {0} outside [0, 1]")]
    BadSeverity(f64),
    #[error("io failure at {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("encoding failure: {0}")]
    Encode(String),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Probability of each defect outcome for a scene; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectMix {
    #[serde(default)]
    pub none: f64,
    #[serde(default)]
    pub split: f64,
    #[serde(default, rename = "break")]
    pub break_: f64,
    #[serde(default)]
    pub decay: f64,
}

impl DefectMix {
    pub fn uniform_defects() -> Self {
        Self {
            none: 0.0,
            split: 1.0 / 3.0,
            break_: 1.0 / 3.0,
            decay: 1.0 / 3.0,
        }
    }

    fn weights(&self) -> [(Option<DefectType>, f64); 4] {
        [
            (None, self.none),
            (Some(DefectType::Split), self.split),
            (Some(DefectType::Break), self.break_),
            (Some(DefectType::Decay), self.decay),
        ]
    }

    /// Maps a uniform draw in `[0, 1)` to an outcome by cumulative weight.
    pub fn pick(&self, u: f64) -> Option<DefectType> {
        let mut acc = 0.0;
        let weights = self.weights();
        for (outcome, p) in weights {
            acc += p;
            if u < acc {
                return outcome;
            }
        }
        // rounding slack: last outcome with positive weight
        weights.iter().rev().find(|(_, p)| *p > 0.0).and_then(|(o, _)| *o)
    }
}

impl Default for DefectMix {
    fn default() -> Self {
        Self {
            none: 0.25,
            split: 0.25,
            break_: 0.25,
            decay: 0.25,
        }
    }
}

/// Closed range `[lo, hi]` (azimuth is half-open at 360).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn check(&self, name: &str, bounds: (f64, f64)) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo > self.hi {
            return Err(SynthError::BadConfig(format!("{name}: inverted or non-finite range")));
        }
        if self.lo < bounds.0 || self.hi > bounds.1 {
            return Err(SynthError::BadConfig(format!(
                "{name}: [{}, {}] outside [{}, {}]",
                self.lo, self.hi, bounds.0, bounds.1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraRanges {
    pub azimuth_deg: Range,
    pub elevation_deg: Range,
    pub distance: Range,
}

impl Default for CameraRanges {
    fn default() -> Self {
        Self {
            azimuth_deg: Range::new(0.0, 360.0),
            elevation_deg: Range::new(10.0, 80.0),
            distance: Range::new(20.0, 60.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LightingRanges {
    pub sun_elevation_deg: Range,
    pub intensity: Range,
}

impl Default for LightingRanges {
    fn default() -> Self {
        Self {
            sun_elevation_deg: Range::new(15.0, 75.0),
            intensity: Range::new(0.2, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub image_width: u32,
    pub image_height: u32,
    pub n_images: u64,
    pub defect_mix: DefectMix,
    pub max_distractors: u32,
    pub camera: CameraRanges,
    pub lighting: LightingRanges,
    /// Range severities are drawn from for defective scenes.
    pub severity: Range,
    pub master_seed: u64,
    /// Prefix for generated image file names.
    pub name: String,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            image_width: 512,
            image_height: 512,
            n_images: 200,
            defect_mix: DefectMix::default(),
            max_distractors: 20,
            camera: CameraRanges::default(),
            lighting: LightingRanges::default(),
            severity: Range::new(0.3, 1.0),
            master_seed: 0,
            name: "synth".into(),
        }
    }
}

impl GenConfig {
    /// Square images at a named tier: 1024, 2048 or 4096 pixels.
    pub fn with_side(mut self, side: u32) -> Self {
        self.image_width = side;
        self.image_height = side;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_width < 32 || self.image_height < 32 {
            return Err(SynthError::BadConfig("images must be at least 32x32".into()));
        }
        if self.max_distractors > MAX_DISTRACTORS {
            return Err(SynthError::BadConfig(format!(
                "max_distractors {} exceeds {MAX_DISTRACTORS}",
                self.max_distractors
            )));
        }
        let probs = self.defect_mix.weights();
        if probs.iter().any(|(_, p)| p.is_nan() || *p < 0.0) {
            return Err(SynthError::BadConfig("defect_mix has a negative probability".into()));
        }
        let total: f64 = probs.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(SynthError::BadConfig(format!("defect_mix sums to {total}, not 1")));
        }
        self.camera.azimuth_deg.check("camera.azimuth_deg", (0.0, 360.0))?;
        self.camera.elevation_deg.check("camera.elevation_deg", (10.0, 80.0))?;
        self.camera.distance.check("camera.distance", (f64::MIN_POSITIVE, f64::MAX))?;
        self.lighting.sun_elevation_deg.check("lighting.sun_elevation_deg", (0.0, 90.0))?;
        self.lighting.intensity.check("lighting.intensity", (0.2, 1.0))?;
        self.severity.check("severity", (0.0, 1.0))?;
        Ok(())
    }
}
