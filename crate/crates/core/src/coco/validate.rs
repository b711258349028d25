use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::json::image_index;
use super::{instance_area, AnnotationSet, BBox};
use crate::raster;

/// Slack allowed between a bbox edge and the polygon extent.
pub const BBOX_TOLERANCE_PX: f64 = 1.0;
/// Relative slack allowed between the stored and rasterized area.
pub const AREA_TOLERANCE: f64 = 0.02;
const VERTEX_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FindingKind {
    DuplicateAnnotationId { first_index: usize, second_index: usize },
    DuplicateImageId { image_id: u64 },
    DuplicateCategoryId { category_id: u64 },
    UnknownImage { image_id: u64 },
    UnknownCategory { category_id: u64 },
    DegenerateBox { bbox: BBox },
    VertexOutOfBounds { x: f64, y: f64, width: u32, height: u32 },
    BboxNotTight { bbox: BBox, extent: BBox },
    AreaMismatch { stored: f64, rasterized: f64 },
    Crowd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    /// Position of the annotation in the set, when the finding is about one.
    pub index: Option<usize>,
    pub annotation_id: Option<u64>,
    #[serde(flatten)]
    pub kind: FindingKind,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

pub fn validate_annotations(set: &AnnotationSet) -> ValidationReport {
    let mut findings = Vec::new();

    let mut seen_images = HashMap::new();
    for img in &set.images {
        if seen_images.insert(img.id, ()).is_some() {
            findings.push(Finding {
                index: None,
                annotation_id: None,
                kind: FindingKind::DuplicateImageId { image_id: img.id },
            });
        }
    }
    let mut seen_cats = HashMap::new();
    for c in &set.categories {
        if seen_cats.insert(c.id, ()).is_some() {
            findings.push(Finding {
                index: None,
                annotation_id: None,
                kind: FindingKind::DuplicateCategoryId { category_id: c.id },
            });
        }
    }

    let images = image_index(set);
    let mut first_by_id: HashMap<u64, usize> = HashMap::new();
    for (index, a) in set.annotations.iter().enumerate() {
        let mut push = |kind| {
            findings.push(Finding {
                index: Some(index),
                annotation_id: Some(a.id),
                kind,
            })
        };
        if let Some(&first) = first_by_id.get(&a.id) {
            push(FindingKind::DuplicateAnnotationId {
                first_index: first,
                second_index: index,
            });
        } else {
            first_by_id.insert(a.id, index);
        }
        if a.iscrowd != 0 {
            push(FindingKind::Crowd);
        }
        if !seen_cats.contains_key(&a.category_id) {
            push(FindingKind::UnknownCategory { category_id: a.category_id });
        }
        if a.bbox.is_degenerate() {
            push(FindingKind::DegenerateBox { bbox: a.bbox });
        }
        let Some(img) = images.get(&a.image_id) else {
            push(FindingKind::UnknownImage { image_id: a.image_id });
            continue;
        };
        let (w, h) = (f64::from(img.width), f64::from(img.height));

        let corners = [a.bbox.x, a.bbox.y, a.bbox.x + a.bbox.w, a.bbox.y + a.bbox.h];
        let box_pts = [corners[0], corners[1], corners[2], corners[3]];
        let vertices = a
            .segmentation
            .iter()
            .flat_map(|r| r.chunks_exact(2))
            .chain(box_pts.chunks_exact(2));
        if let Some(p) = vertices
            .into_iter()
            .find(|p| p[0] < -VERTEX_EPS || p[1] < -VERTEX_EPS || p[0] > w + VERTEX_EPS || p[1] > h + VERTEX_EPS)
        {
            push(FindingKind::VertexOutOfBounds {
                x: p[0],
                y: p[1],
                width: img.width,
                height: img.height,
            });
        }

        if let Some((x0, y0, x1, y1)) = raster::extent(&a.segmentation) {
            let loose = (corners[0] - x0).abs() > BBOX_TOLERANCE_PX
                || (corners[1] - y0).abs() > BBOX_TOLERANCE_PX
                || (corners[2] - x1).abs() > BBOX_TOLERANCE_PX
                || (corners[3] - y1).abs() > BBOX_TOLERANCE_PX;
            if loose {
                push(FindingKind::BboxNotTight {
                    bbox: a.bbox,
                    extent: BBox::new(x0, y0, x1 - x0, y1 - y0),
                });
            }
        }

        let rasterized = instance_area(&a.segmentation, &a.bbox, img.width, img.height);
        if (a.area - rasterized).abs() > AREA_TOLERANCE * rasterized {
            push(FindingKind::AreaMismatch {
                stored: a.area,
                rasterized,
            });
        }
    }
    ValidationReport { findings }
}
