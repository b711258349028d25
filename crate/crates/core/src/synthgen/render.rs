use image::{Rgb, RgbImage};

use super::defect::{inject_defect, ArmGeometry};
use super::scene::{SceneSpec, Shape};
use super::{GenConfig, Result};
use crate::coco::{standard_category_id, DefectType, InstanceAnnotation};
use crate::raster::{self, Bitmask};

const SKY: [u8; 3] = [150, 190, 230];
const GROUND: [u8; 3] = [96, 124, 72];
const POLE: [u8; 3] = [92, 78, 64];
const SPLIT: [u8; 3] = [30, 22, 18];
const DECAY: [u8; 3] = [64, 82, 40];

#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub image: RgbImage,
    /// Annotations with `image_id = index + 1` and ids numbered from 1.
    pub annotations: Vec<InstanceAnnotation>,
    pub scene: SceneSpec,
    /// Row-major owner of each pixel: 0 for unlabeled, `k + 1` for
    /// `annotations[k]`.
    pub instance_map: Vec<u16>,
}

struct Canvas {
    image: RgbImage,
    owner: Vec<u16>,
    shade: f64,
}

impl Canvas {
    fn paint(&mut self, rings: &[Vec<f64>], color: [u8; 3], owner: Option<u16>) {
        let (w, h) = self.image.dimensions();
        let c = shade(color, self.shade);
        let image = &mut self.image;
        let owners = &mut self.owner;
        raster::for_each_span(rings, w, h, |y, x0, x1| {
            for x in x0..x1 {
                image.put_pixel(x, y, c);
                if let Some(o) = owner {
                    owners[(y * w + x) as usize] = o;
                } else {
                    owners[(y * w + x) as usize] = 0;
                }
            }
        });
    }
}

fn shade(color: [u8; 3], factor: f64) -> Rgb<u8> {
    Rgb(color.map(|c| (f64::from(c) * factor).round().clamp(0.0, 255.0) as u8))
}

fn distractor_ring(d: &super::scene::Distractor) -> Vec<f64> {
    let (s, c) = d.rotation_deg.to_radians().sin_cos();
    let local: Vec<(f64, f64)> = match d.shape {
        Shape::Rect => vec![(-0.5, -0.3), (0.5, -0.3), (0.5, 0.3), (-0.5, 0.3)],
        Shape::Triangle => vec![(0.0, -0.5), (0.5, 0.4), (-0.5, 0.4)],
        Shape::Ellipse => (0..16)
            .map(|i| {
                let a = std::f64::consts::TAU * f64::from(i) / 16.0;
                (0.5 * a.cos(), 0.35 * a.sin())
            })
            .collect(),
    };
    local
        .into_iter()
        .flat_map(|(u, v)| {
            let (u, v) = (u * d.size, v * d.size);
            [d.center[0] + u * c - v * s, d.center[1] + u * s + v * c]
        })
        .collect()
}

pub(crate) fn arm_of(spec: &SceneSpec) -> ArmGeometry {
    ArmGeometry {
        center: spec.pose.center,
        length: spec.pose.arm_length,
        thickness: spec.pose.arm_thickness,
        angle_rad: spec.pose.roll_deg.to_radians(),
    }
}

/// Paints background, distractors, pole, arm and defect in that order and
/// labels the arm from the same polygons that were painted.
pub fn render_scene(spec: &SceneSpec, cfg: &GenConfig) -> Result<RenderedScene> {
    cfg.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut canvas = Canvas {
        image: RgbImage::new(w, h),
        owner: vec![0; (w * h) as usize],
        shade: spec.lighting.shade(),
    };

    let horizon = spec.pose.horizon_y.clamp(0.0, f64::from(h));
    let sky = shade(SKY, canvas.shade);
    let ground = shade(GROUND, canvas.shade);
    for (_, y, px) in canvas.image.enumerate_pixels_mut() {
        *px = if f64::from(y) + 0.5 < horizon { sky } else { ground };
    }

    for d in &spec.distractors {
        canvas.paint(&[distractor_ring(d)], d.color, None);
    }

    let arm = arm_of(spec);
    let pole_half = spec.pose.pole_width / 2.0;
    let pole_top = -2.5 * spec.pose.arm_thickness;
    let pole_bottom = 2.0 * f64::from(w + h);
    let pole: Vec<f64> = [(-pole_half, pole_top), (pole_half, pole_top), (pole_half, pole_bottom), (-pole_half, pole_bottom)]
        .iter()
        .flat_map(|&(u, v)| arm.to_image(u, v))
        .collect();
    canvas.paint(&[pole], POLE, None);

    let (arm_rings, defect_ring) = match &spec.defect {
        Some(d) => {
            let g = inject_defect(&arm, d)?;
            (g.arm_rings, g.defect_ring)
        }
        None => (vec![arm.outline()], Vec::new()),
    };
    canvas.paint(&arm_rings, spec.arm_color, Some(1));
    // the crack or blotch is part of the arm instance
    match spec.defect.map(|d| d.kind) {
        Some(DefectType::Split) if !defect_ring.is_empty() => canvas.paint(&[defect_ring], SPLIT, Some(1)),
        Some(DefectType::Decay) if !defect_ring.is_empty() => canvas.paint(&[defect_ring], DECAY, Some(1)),
        _ => {}
    }

    let category = standard_category_id(spec.defect.filter(|d| d.severity > 0.0).map(|d| d.kind));
    let annotation = InstanceAnnotation::from_rings(1, spec.index + 1, category, arm_rings, w, h);

    Ok(RenderedScene {
        image: canvas.image,
        annotations: vec![annotation],
        scene: spec.clone(),
        instance_map: canvas.owner,
    })
}

/// Pixel IoU between each annotation's polygons and the pixels the renderer
/// attributed to that instance.
pub fn label_fidelity(scene: &RenderedScene) -> Vec<f64> {
    let (w, h) = scene.image.dimensions();
    scene
        .annotations
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let labeled = raster::rasterize(&a.segmentation, w, h);
            let mut rendered = Bitmask::new(w, h);
            for (i, &o) in scene.instance_map.iter().enumerate() {
                if usize::from(o) == k + 1 {
                    rendered.set(i as u32 % w, i as u32 / w, true);
                }
            }
            let union = labeled.union_count(&rendered);
            if union == 0 {
                0.0
            } else {
                labeled.intersection_count(&rendered) as f64 / union as f64
            }
        })
        .collect()
}
