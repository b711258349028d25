//! Reading and writing COCO JSON.
//!
//! Output layout is fixed: top-level keys `images`, `annotations`,
//! `categories`; image keys `id, file_name, width, height`; annotation keys
//! `id, image_id, category_id, bbox, segmentation, area, iscrowd`; category
//! keys `id, name, supercategory`. Lists keep their in-memory order, the
//! document is compact JSON followed by a single newline, so equal sets
//! produce byte-identical files.

use std::collections::{HashMap, HashSet};

use serde::Serialize;
use serde_json::{Map, Value};

use super::{
    validate_annotations, AnnotationSet, BBox, CategorySpec, CocoError, ImageEntry,
    InstanceAnnotation, Result, SUPERCATEGORY,
};

pub fn parse_coco(bytes: &[u8]) -> Result<AnnotationSet> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| CocoError::MalformedDocument(format!("not UTF-8: {e}")))?;
    let doc: Value =
        serde_json::from_str(text).map_err(|e| CocoError::MalformedDocument(e.to_string()))?;
    let root = doc
        .as_object()
        .ok_or_else(|| CocoError::MalformedDocument("top level is not an object".into()))?;

    let images = list(root, "images")?
        .iter()
        .enumerate()
        .map(|(i, v)| parse_image(i, v))
        .collect::<Result<Vec<_>>>()?;
    let categories = list(root, "categories")?
        .iter()
        .enumerate()
        .map(|(i, v)| parse_category(i, v))
        .collect::<Result<Vec<_>>>()?;
    let annotations = list(root, "annotations")?
        .iter()
        .enumerate()
        .map(|(i, v)| parse_annotation(i, v))
        .collect::<Result<Vec<_>>>()?;

    let set = AnnotationSet {
        images,
        annotations,
        categories,
    };
    check_references(&set)?;
    Ok(set)
}

pub fn write_coco(set: &AnnotationSet) -> Result<Vec<u8>> {
    check_references(set)?;
    let report = validate_annotations(set);
    if !report.is_clean() {
        return Err(CocoError::InvariantViolation(report));
    }
    let doc = CocoDoc {
        images: set
            .images
            .iter()
            .map(|i| ImageOut {
                id: i.id,
                file_name: &i.file_name,
                width: i.width,
                height: i.height,
            })
            .collect(),
        annotations: set
            .annotations
            .iter()
            .map(|a| AnnotationOut {
                id: a.id,
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: [a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h],
                segmentation: &a.segmentation,
                area: a.area,
                iscrowd: a.iscrowd,
            })
            .collect(),
        categories: set
            .categories
            .iter()
            .map(|c| CategoryOut {
                id: c.id,
                name: &c.name,
                supercategory: SUPERCATEGORY,
            })
            .collect(),
    };
    let mut out = serde_json::to_vec(&doc).map_err(|e| CocoError::MalformedDocument(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

fn check_references(set: &AnnotationSet) -> Result<()> {
    let mut image_ids = HashSet::new();
    for img in &set.images {
        if !image_ids.insert(img.id) {
            return Err(CocoError::DuplicateId { record: "image", id: img.id });
        }
    }
    let mut cat_ids = HashSet::new();
    for c in &set.categories {
        if !cat_ids.insert(c.id) {
            return Err(CocoError::DuplicateId { record: "category", id: c.id });
        }
    }
    let mut ann_ids = HashSet::new();
    for a in &set.annotations {
        if !ann_ids.insert(a.id) {
            return Err(CocoError::DuplicateId { record: "annotation", id: a.id });
        }
        if !image_ids.contains(&a.image_id) {
            return Err(CocoError::DanglingReference {
                annotation_id: a.id,
                target: "image",
                id: a.image_id,
            });
        }
        if !cat_ids.contains(&a.category_id) {
            return Err(CocoError::DanglingReference {
                annotation_id: a.id,
                target: "category",
                id: a.category_id,
            });
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct CocoDoc<'a> {
    images: Vec<ImageOut<'a>>,
    annotations: Vec<AnnotationOut<'a>>,
    categories: Vec<CategoryOut<'a>>,
}

#[derive(Serialize)]
struct ImageOut<'a> {
    id: u64,
    file_name: &'a str,
    width: u32,
    height: u32,
}

#[derive(Serialize)]
struct AnnotationOut<'a> {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    segmentation: &'a [Vec<f64>],
    area: f64,
    iscrowd: u8,
}

#[derive(Serialize)]
struct CategoryOut<'a> {
    id: u64,
    name: &'a str,
    supercategory: &'a str,
}

fn list<'a>(root: &'a Map<String, Value>, key: &'static str) -> Result<&'a Vec<Value>> {
    match root.get(key) {
        Some(Value::Array(v)) => Ok(v),
        Some(_) => Err(CocoError::MalformedDocument(format!("`{key}` is not a list"))),
        None => Err(CocoError::MalformedDocument(format!("missing top-level `{key}`"))),
    }
}

struct Rec<'a> {
    kind: &'static str,
    index: usize,
    obj: &'a Map<String, Value>,
}

impl<'a> Rec<'a> {
    fn new(kind: &'static str, index: usize, v: &'a Value) -> Result<Self> {
        let obj = v.as_object().ok_or_else(|| CocoError::InvalidField {
            record: kind,
            index,
            field: "<record>",
            reason: "not an object".into(),
        })?;
        Ok(Self { kind, index, obj })
    }

    fn get(&self, field: &'static str) -> Result<&'a Value> {
        self.obj.get(field).ok_or(CocoError::MissingField {
            record: self.kind,
            index: self.index,
            field,
        })
    }

    fn invalid(&self, field: &'static str, reason: impl Into<String>) -> CocoError {
        CocoError::InvalidField {
            record: self.kind,
            index: self.index,
            field,
            reason: reason.into(),
        }
    }

    fn positive_id(&self, field: &'static str) -> Result<u64> {
        match self.get(field)?.as_u64() {
            Some(v) if v > 0 => Ok(v),
            _ => Err(self.invalid(field, "expected a positive integer")),
        }
    }

    fn dim(&self, field: &'static str) -> Result<u32> {
        match self.get(field)?.as_u64() {
            Some(v) if v > 0 && v <= u64::from(u32::MAX) => Ok(v as u32),
            _ => Err(self.invalid(field, "expected a positive pixel count")),
        }
    }

    fn string(&self, field: &'static str) -> Result<&'a str> {
        self.get(field)?
            .as_str()
            .ok_or_else(|| self.invalid(field, "expected a string"))
    }

    fn number(&self, field: &'static str) -> Result<f64> {
        self.get(field)?
            .as_f64()
            .ok_or_else(|| self.invalid(field, "expected a number"))
    }
}

fn parse_image(index: usize, v: &Value) -> Result<ImageEntry> {
    let r = Rec::new("images", index, v)?;
    Ok(ImageEntry {
        id: r.positive_id("id")?,
        file_name: r.string("file_name")?.to_string(),
        width: r.dim("width")?,
        height: r.dim("height")?,
    })
}

fn parse_category(index: usize, v: &Value) -> Result<CategorySpec> {
    let r = Rec::new("categories", index, v)?;
    let id = r.positive_id("id")?;
    CategorySpec::from_name(id, r.string("name")?)
}

fn parse_annotation(index: usize, v: &Value) -> Result<InstanceAnnotation> {
    let r = Rec::new("annotations", index, v)?;
    let bbox = match r.get("bbox")? {
        Value::Array(xs) if xs.len() == 4 => {
            let mut b = [0.0; 4];
            for (slot, x) in b.iter_mut().zip(xs) {
                *slot = x.as_f64().ok_or_else(|| r.invalid("bbox", "non-numeric entry"))?;
            }
            BBox::from(b)
        }
        _ => return Err(r.invalid("bbox", "expected [x, y, w, h]")),
    };
    let segmentation = match r.obj.get("segmentation") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(rings)) => rings
            .iter()
            .map(|ring| {
                let pts = ring
                    .as_array()
                    .ok_or_else(|| r.invalid("segmentation", "ring is not a list"))?;
                if pts.len() % 2 != 0 {
                    return Err(r.invalid("segmentation", "ring has an odd coordinate count"));
                }
                pts.iter()
                    .map(|p| {
                        p.as_f64()
                            .ok_or_else(|| r.invalid("segmentation", "non-numeric coordinate"))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?,
        Some(Value::Object(_)) => {
            return Err(r.invalid("segmentation", "RLE masks are not supported"))
        }
        Some(_) => return Err(r.invalid("segmentation", "expected a list of rings")),
    };
    let iscrowd = match r.obj.get("iscrowd") {
        None => 0,
        Some(v) => match v.as_u64() {
            Some(0) => 0,
            Some(_) => return Err(r.invalid("iscrowd", "crowd annotations are not supported")),
            None => return Err(r.invalid("iscrowd", "expected 0")),
        },
    };
    Ok(InstanceAnnotation {
        id: r.positive_id("id")?,
        image_id: r.positive_id("image_id")?,
        category_id: r.positive_id("category_id")?,
        bbox,
        segmentation,
        area: r.number("area")?,
        iscrowd,
    })
}

/// Index from image id to its entry, for callers that resolve many lookups.
pub(crate) fn image_index(set: &AnnotationSet) -> HashMap<u64, &ImageEntry> {
    set.images.iter().map(|i| (i.id, i)).collect()
}
