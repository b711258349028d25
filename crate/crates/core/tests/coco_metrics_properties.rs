use std::collections::HashMap;

use polescan_core::coco::{
    normalize_labels, parse_coco, standard_categories, validate_annotations, write_coco, AnnotationSet, BBox,
    CoordFrame, ImageEntry, InstanceAnnotation, RawAnnotation, RawLabelSet,
};
use polescan_core::metrics::{average_precision, box_iou, mask_iou, Detection, EvalMode};
use proptest::prelude::*;

const W: u32 = 96;
const H: u32 = 64;

fn polygon() -> impl Strategy<Value = Vec<f64>> {
    // a quadrilateral spanning at least 2 px each way, on a 0.25 px grid
    (0u32..300, 0u32..200, 8u32..80, 8u32..60, 0u32..8, 0u32..8).prop_map(|(x, y, w, h, dx, dy)| {
        let q = |v: u32| f64::from(v) / 4.0;
        let (x0, y0) = (q(x).min(f64::from(W) - q(w)), q(y).min(f64::from(H) - q(h)));
        let (x1, y1) = (x0 + q(w), y0 + q(h));
        vec![x0 + q(dx), y0, x1, y0 + q(dy), x1 - q(dx), y1, x0, y1 - q(dy)]
    })
}

fn annotation_set() -> impl Strategy<Value = AnnotationSet> {
    (1usize..4, prop::collection::vec((0usize..3, 1u64..5, polygon()), 0..8)).prop_map(|(n_images, anns)| {
        let images: Vec<ImageEntry> = (0..n_images)
            .map(|i| ImageEntry {
                id: i as u64 + 1,
                file_name: format!("img_{i}.png"),
                width: W,
                height: H,
            })
            .collect();
        let annotations = anns
            .into_iter()
            .enumerate()
            .map(|(k, (img, cat, ring))| {
                InstanceAnnotation::from_rings(k as u64 + 1, (img % n_images) as u64 + 1, cat, vec![ring], W, H)
            })
            .collect();
        AnnotationSet {
            images,
            annotations,
            categories: standard_categories(),
        }
    })
}

fn to_raw(set: &AnnotationSet, frame: CoordFrame) -> RawLabelSet {
    let (sx, sy) = match frame {
        CoordFrame::Absolute => (1.0, 1.0),
        CoordFrame::Relative => (f64::from(W), f64::from(H)),
    };
    RawLabelSet {
        images: set.images.iter().map(|i| (i.id, i.file_name.clone())).collect(),
        annotations: set
            .annotations
            .iter()
            .map(|a| RawAnnotation {
                id: a.id,
                image_id: a.image_id,
                category_id: a.category_id,
                frame,
                bbox: None,
                segmentation: a
                    .segmentation
                    .iter()
                    .map(|r| r.chunks(2).flat_map(|p| [p[0] / sx, p[1] / sy]).collect())
                    .collect(),
            })
            .collect(),
        categories: set.categories.clone(),
    }
}

fn dims(set: &AnnotationSet) -> HashMap<u64, (u32, u32)> {
    set.images.iter().map(|i| (i.id, (i.width, i.height))).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn coco_round_trip(set in annotation_set()) {
        let bytes = write_coco(&set).unwrap();
        let back = parse_coco(&bytes).unwrap();
        prop_assert_eq!(&back, &set);
        prop_assert_eq!(write_coco(&back).unwrap(), bytes);
    }

    #[test]
    fn normalize_is_idempotent_and_validates(set in annotation_set()) {
        let d = dims(&set);
        let once = normalize_labels(&to_raw(&set, CoordFrame::Absolute), &d).unwrap();
        let twice = normalize_labels(&to_raw(&once, CoordFrame::Absolute), &d).unwrap();
        prop_assert_eq!(&once, &twice);
        let report = validate_annotations(&once);
        prop_assert!(report.is_clean(), "{:?}", report);
    }

    #[test]
    fn relative_frame_matches_absolute(set in annotation_set()) {
        let d = dims(&set);
        let abs = normalize_labels(&to_raw(&set, CoordFrame::Absolute), &d).unwrap();
        let rel = normalize_labels(&to_raw(&set, CoordFrame::Relative), &d).unwrap();
        for (a, r) in abs.annotations.iter().zip(&rel.annotations) {
            prop_assert!((a.bbox.x - r.bbox.x).abs() < 1e-9 && (a.bbox.w - r.bbox.w).abs() < 1e-9);
        }
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in polygon(), b in polygon()) {
        let (a, b) = (vec![a], vec![b]);
        let ba = BBox::enclosing(&a).unwrap();
        let bb = BBox::enclosing(&b).unwrap();
        let x = box_iou(&ba, &bb).unwrap();
        prop_assert_eq!(x, box_iou(&bb, &ba).unwrap());
        prop_assert!((0.0..=1.0).contains(&x));
        let m = mask_iou(&a, &b, W, H).unwrap();
        prop_assert_eq!(m, mask_iou(&b, &a, W, H).unwrap());
        prop_assert!((0.0..=1.0).contains(&m));
        prop_assert_eq!(mask_iou(&a, &a, W, H).unwrap(), 1.0);
    }

    #[test]
    fn ap_invariant_under_monotone_confidence_maps(
        set in annotation_set(),
        jitter in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 0.0f64..1.0), 8),
        extra in prop::collection::vec((0usize..3, polygon(), 0.0f64..1.0), 0..4),
    ) {
        let mut dets: Vec<Detection> = set
            .annotations
            .iter()
            .zip(jitter.iter().cycle())
            .map(|(a, &(dx, dy, c))| Detection {
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: BBox::new(a.bbox.x + dx, a.bbox.y + dy, a.bbox.w, a.bbox.h),
                segmentation: None,
                confidence: c,
            })
            .collect();
        for (img, ring, c) in extra {
            dets.push(Detection {
                image_id: (img % set.images.len()) as u64 + 1,
                category_id: 1,
                bbox: BBox::enclosing(&[ring]).unwrap(),
                segmentation: None,
                confidence: c,
            });
        }
        let d = dims(&set);
        let base = average_precision(&dets, &set.annotations, 0.5, None, EvalMode::Box, &d).unwrap();
        let mapped: Vec<Detection> = dets
            .iter()
            .map(|x| Detection { confidence: 0.1 + 0.5 * x.confidence.powi(3), ..x.clone() })
            .collect();
        let after = average_precision(&mapped, &set.annotations, 0.5, None, EvalMode::Box, &d).unwrap();
        prop_assert!((base - after).abs() < 1e-12, "{} vs {}", base, after);
    }
}
