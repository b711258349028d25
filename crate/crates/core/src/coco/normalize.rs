use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{instance_area, AnnotationSet, BBox, CategorySpec, CocoError, ImageEntry, InstanceAnnotation, Result};

const RELATIVE_EPS: f64 = 1e-6;

/// Coordinate frame of a raw label. The frame is always explicit; it is
/// never guessed from coordinate magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordFrame {
    /// Fractions of image width/height in `[0, 1]`.
    Relative,
    /// Pixels.
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub frame: CoordFrame,
    /// `(x, y, w, h)`; ignored when a segmentation is present.
    pub bbox: Option<[f64; 4]>,
    #[serde(default)]
    pub segmentation: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RawLabelSet {
    /// `(image_id, file_name)`
    pub images: Vec<(u64, String)>,
    pub annotations: Vec<RawAnnotation>,
    pub categories: Vec<CategorySpec>,
}

/// Converts raw labels to absolute pixel coordinates, fills image dimensions,
/// and recomputes bbox (from polygons when present) and area.
pub fn normalize_labels(raw: &RawLabelSet, dims: &HashMap<u64, (u32, u32)>) -> Result<AnnotationSet> {
    let images = raw
        .images
        .iter()
        .map(|(id, name)| {
            let &(width, height) = dims.get(id).ok_or(CocoError::MissingDims(*id))?;
            Ok(ImageEntry {
                id: *id,
                file_name: name.clone(),
                width,
                height,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let annotations = raw
        .annotations
        .iter()
        .map(|a| normalize_one(a, dims))
        .collect::<Result<Vec<_>>>()?;

    Ok(AnnotationSet {
        images,
        annotations,
        categories: raw.categories.clone(),
    })
}

fn normalize_one(a: &RawAnnotation, dims: &HashMap<u64, (u32, u32)>) -> Result<InstanceAnnotation> {
    let &(width, height) = dims.get(&a.image_id).ok_or(CocoError::MissingDims(a.image_id))?;
    let (sx, sy) = match a.frame {
        CoordFrame::Absolute => (1.0, 1.0),
        CoordFrame::Relative => (f64::from(width), f64::from(height)),
    };
    let scale = |v: f64, s: f64| -> Result<f64> {
        if a.frame == CoordFrame::Relative {
            if !(-RELATIVE_EPS..=1.0 + RELATIVE_EPS).contains(&v) {
                return Err(CocoError::OutOfRange { annotation_id: a.id, value: v });
            }
            Ok(v.clamp(0.0, 1.0) * s)
        } else {
            Ok(v)
        }
    };

    let segmentation = a
        .segmentation
        .iter()
        .map(|ring| {
            ring.chunks_exact(2)
                .flat_map(|p| [scale(p[0], sx), scale(p[1], sy)])
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let bbox = if let Some(b) = BBox::enclosing(&segmentation) {
        b
    } else if let Some([x, y, w, h]) = a.bbox {
        BBox::new(scale(x, sx)?, scale(y, sy)?, scale(w, sx)?, scale(h, sy)?)
    } else {
        BBox::new(0.0, 0.0, 0.0, 0.0)
    };
    let area = instance_area(&segmentation, &bbox, width, height);
    Ok(InstanceAnnotation {
        id: a.id,
        image_id: a.image_id,
        category_id: a.category_id,
        bbox,
        segmentation,
        area,
        iscrowd: 0,
    })
}
