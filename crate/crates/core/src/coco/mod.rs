//! COCO object-detection / instance-segmentation annotation sets.
//!
//! Boxes are `(x, y, w, h)` with a top-left origin. Segmentations are lists of
//! flat rings `[x0, y0, x1, y1, ...]` in absolute pixels, filled even-odd, so a
//! hole is just another ring. Health and defect type ride on the category name
//! (`crossarm_healthy`, `crossarm_split`, `crossarm_break`, `crossarm_decay`).

mod json;
mod normalize;
mod validate;

pub use json::{parse_coco, write_coco};
pub use normalize::{normalize_labels, CoordFrame, RawAnnotation, RawLabelSet};
pub use validate::{validate_annotations, Finding, FindingKind, ValidationReport};

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster;

pub const SUPERCATEGORY: &str = "crossarm";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CocoError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("missing field `{field}` in {record}[{index}]")]
    MissingField {
        record: &'static str,
        index: usize,
        field: &'static str,
    },
    #[error("invalid field `{field}` in {record}[{index}]: {reason}")]
    InvalidField {
        record: &'static str,
        index: usize,
        field: &'static str,
        reason: String,
    },
    #[error("annotation {annotation_id} references unknown {target} {id}")]
    DanglingReference {
        annotation_id: u64,
        target: &'static str,
        id: u64,
    },
    #[error("duplicate {record} id {id}")]
    DuplicateId { record: &'static str, id: u64 },
    #[error("unknown category name `{0}`")]
    UnknownCategoryName(String),
    #[error("annotation set fails validation with {} finding(s)", .0.findings.len())]
    InvariantViolation(ValidationReport),
    #[error("no dimensions supplied for image {0}")]
    MissingDims(u64),
    #[error("annotation {annotation_id}: relative coordinate {value} outside [0, 1]")]
    OutOfRange { annotation_id: u64, value: f64 },
}

pub type Result<T> = std::result::Result<T, CocoError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Health {
    Healthy,
    Defective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DefectType {
    Split,
    Break,
    Decay,
}

impl DefectType {
    pub const ALL: [DefectType; 3] = [DefectType::Split, DefectType::Break, DefectType::Decay];

    pub fn category_name(self) -> &'static str {
        match self {
            DefectType::Split => "crossarm_split",
            DefectType::Break => "crossarm_break",
            DefectType::Decay => "crossarm_decay",
        }
    }
}

impl fmt::Display for DefectType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DefectType::Split => "split",
            DefectType::Break => "break",
            DefectType::Decay => "decay",
        };
        f.write_str(s)
    }
}

pub const HEALTHY_NAME: &str = "crossarm_healthy";

/// A category whose health and defect type are derived from its name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub id: u64,
    pub name: String,
    pub health: Health,
    pub defect_type: Option<DefectType>,
}

impl CategorySpec {
    pub fn from_name(id: u64, name: &str) -> Result<Self> {
        let defect_type = match name {
            HEALTHY_NAME => None,
            "crossarm_split" => Some(DefectType::Split),
            "crossarm_break" => Some(DefectType::Break),
            "crossarm_decay" => Some(DefectType::Decay),
            other => return Err(CocoError::UnknownCategoryName(other.to_string())),
        };
        Ok(Self {
            id,
            name: name.to_string(),
            health: if defect_type.is_some() {
                Health::Defective
            } else {
                Health::Healthy
            },
            defect_type,
        })
    }
}

/// The fixed four-category vocabulary with ids 1..=4
/// (healthy, split, break, decay).
pub fn standard_categories() -> Vec<CategorySpec> {
    [HEALTHY_NAME, "crossarm_split", "crossarm_break", "crossarm_decay"]
        .iter()
        .enumerate()
        .map(|(i, n)| CategorySpec::from_name(i as u64 + 1, n).expect("vocabulary"))
        .collect()
}

/// Category id for an optional defect in [`standard_categories`].
pub fn standard_category_id(defect: Option<DefectType>) -> u64 {
    match defect {
        None => 1,
        Some(DefectType::Split) => 2,
        Some(DefectType::Break) => 3,
        Some(DefectType::Decay) => 4,
    }
}

/// `(x, y, w, h)`, top-left origin, absolute pixels. Serialized as a 4-array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.w > 0.0 && self.h > 0.0)
    }

    pub fn to_ring(&self) -> Vec<f64> {
        raster::rect_ring(self.x, self.y, self.w, self.h)
    }

    /// Tight box around all ring vertices.
    pub fn enclosing(rings: &[Vec<f64>]) -> Option<Self> {
        raster::extent(rings).map(|(x0, y0, x1, y1)| Self::new(x0, y0, x1 - x0, y1 - y0))
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    #[serde(default)]
    pub segmentation: Vec<Vec<f64>>,
    pub area: f64,
    #[serde(default)]
    pub iscrowd: u8,
}

impl InstanceAnnotation {
    /// Builds an annotation from polygon rings, deriving the tight bbox and the
    /// rasterized area on a `width x height` image.
    pub fn from_rings(
        id: u64,
        image_id: u64,
        category_id: u64,
        segmentation: Vec<Vec<f64>>,
        width: u32,
        height: u32,
    ) -> Self {
        let bbox = BBox::enclosing(&segmentation).unwrap_or(BBox::new(0.0, 0.0, 0.0, 0.0));
        let area = instance_area(&segmentation, &bbox, width, height);
        Self {
            id,
            image_id,
            category_id,
            bbox,
            segmentation,
            area,
            iscrowd: 0,
        }
    }

    /// Region used for mask-level comparisons: the polygons, or the box when
    /// no polygon is present.
    pub fn region(&self) -> Vec<Vec<f64>> {
        if self.segmentation.is_empty() {
            vec![self.bbox.to_ring()]
        } else {
            self.segmentation.clone()
        }
    }
}

/// Area of an instance in pixels: the rasterized polygon union, or the
/// rasterized box for box-only instances.
pub fn instance_area(segmentation: &[Vec<f64>], bbox: &BBox, width: u32, height: u32) -> f64 {
    let count = if segmentation.is_empty() {
        raster::covered_area(&[bbox.to_ring()], width, height)
    } else {
        raster::covered_area(segmentation, width, height)
    };
    count as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub images: Vec<ImageEntry>,
    pub annotations: Vec<InstanceAnnotation>,
    pub categories: Vec<CategorySpec>,
}

impl AnnotationSet {
    pub fn image(&self, id: u64) -> Option<&ImageEntry> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn category(&self, id: u64) -> Option<&CategorySpec> {
        self.categories.iter().find(|c| c.id == id)
    }

    pub fn dims(&self) -> HashMap<u64, (u32, u32)> {
        self.images.iter().map(|i| (i.id, (i.width, i.height))).collect()
    }

    /// Annotations grouped by image id, preserving file order within each image.
    pub fn by_image(&self) -> HashMap<u64, Vec<InstanceAnnotation>> {
        let mut out: HashMap<u64, Vec<InstanceAnnotation>> = HashMap::new();
        for a in &self.annotations {
            out.entry(a.image_id).or_default().push(a.clone());
        }
        out
    }
}
