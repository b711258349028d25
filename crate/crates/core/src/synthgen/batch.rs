use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::ImageFormat;
use rayon::prelude::*;

use super::{render_scene, sample_scene, GenConfig, Result, SceneSpec, SynthError};
use crate::coco::{standard_categories, write_coco, AnnotationSet, ImageEntry};
use crate::dataset::{DatasetManifest, ManifestEntry, Provenance, ResolutionTier, Split};

pub const IMAGES_DIR: &str = "images";
pub const COCO_FILE: &str = "annotations.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCENES_FILE: &str = "scenes.jsonl";

#[derive(Debug, Clone)]
pub struct GeneratedBatch {
    pub manifest: DatasetManifest,
    pub annotations: AnnotationSet,
}

pub fn image_file_name(cfg: &GenConfig, index: u64) -> String {
    format!("{}_{:06}.png", cfg.name, index)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::IoFailure {
        path: path.display().to_string(),
        source,
    }
}

/// Renders `cfg.n_images` scenes into `out_dir/images/`, and writes
/// `annotations.json` (COCO), `manifest.json` and `scenes.jsonl` (one sampled
/// scene per line). Scenes render in parallel; files are assembled in index
/// order.
pub fn generate_batch(cfg: &GenConfig, out_dir: &Path) -> Result<GeneratedBatch> {
    cfg.validate()?;
    let images_dir = out_dir.join(IMAGES_DIR);
    fs::create_dir_all(&images_dir).map_err(io_err(&images_dir))?;

    let rendered = (0..cfg.n_images)
        .into_par_iter()
        .map(|index| {
            let spec = sample_scene(cfg.master_seed, index, cfg)?;
            let scene = render_scene(&spec, cfg)?;
            let mut png = Vec::new();
            scene
                .image
                .write_to(&mut Cursor::new(&mut png), ImageFormat::Png)
                .map_err(|e| SynthError::Encode(e.to_string()))?;
            let path = images_dir.join(image_file_name(cfg, index));
            fs::write(&path, &png).map_err(io_err(&path))?;
            Ok((spec, scene.annotations))
        })
        .collect::<Result<Vec<_>>>()?;

    let categories = standard_categories();
    let tier = ResolutionTier::from_dims(cfg.image_width, cfg.image_height);
    let mut set = AnnotationSet {
        images: Vec::with_capacity(rendered.len()),
        annotations: Vec::new(),
        categories: categories.clone(),
    };
    let mut entries = Vec::with_capacity(rendered.len());
    let mut scenes = String::new();
    for (spec, annotations) in rendered {
        let file_name = image_file_name(cfg, spec.index);
        set.images.push(ImageEntry {
            id: spec.index + 1,
            file_name: file_name.clone(),
            width: cfg.image_width,
            height: cfg.image_height,
        });
        let names = annotations
            .iter()
            .map(|a| {
                categories
                    .iter()
                    .find(|c| c.id == a.category_id)
                    .map(|c| c.name.clone())
                    .unwrap_or_default()
            })
            .collect();
        for mut a in annotations {
            a.id = set.annotations.len() as u64 + 1;
            set.annotations.push(a);
        }
        entries.push(ManifestEntry {
            image_id: file_name,
            split: Split::Train,
            provenance: Provenance::Synthetic,
            resolution_tier: tier,
            categories: names,
        });
        scenes.push_str(&scene_line(&spec)?);
    }

    let coco = write_coco(&set).map_err(|e| SynthError::Encode(e.to_string()))?;
    let coco_path = out_dir.join(COCO_FILE);
    fs::write(&coco_path, coco).map_err(io_err(&coco_path))?;

    let manifest = DatasetManifest::new(cfg.name.clone(), entries).map_err(|e| SynthError::Encode(e.to_string()))?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let body = serde_json::to_vec_pretty(&manifest).map_err(|e| SynthError::Encode(e.to_string()))?;
    fs::write(&manifest_path, body).map_err(io_err(&manifest_path))?;

    let scenes_path = out_dir.join(SCENES_FILE);
    fs::write(&scenes_path, scenes).map_err(io_err(&scenes_path))?;

    Ok(GeneratedBatch {
        manifest,
        annotations: set,
    })
}

fn scene_line(spec: &SceneSpec) -> Result<String> {
    let mut line = serde_json::to_string(spec).map_err(|e| SynthError::Encode(e.to_string()))?;
    line.push('\n');
    Ok(line)
}
