use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    build_manifest, io_err, ExperimentConfig, ExperimentError, PoolItem, Result, RunSummary, TestSet,
};
use crate::coco::InstanceAnnotation;
use crate::dataset::{Composition, DatasetManifest};
use crate::detector::DetectInput;
use crate::metrics::{
    cap_detections, class_metrics, corpus_confusion, lift_percent, mean_average_precision, ClassMetrics, Detection,
    EvalMode, EvalReport, HealthConfusion, DEFAULT_CONFIDENCE, DEFAULT_MAX_PER_IMAGE,
};

pub const REPORT_FILE: &str = "report.json";
pub const PROGRESS_FILE: &str = "progress.jsonl";
const PROGRESS_KEY_FILE: &str = "progress.key";
const CONFUSION_IOU: f64 = 0.5;

/// Pools and the results directory shared by a series of runs.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub results_dir: PathBuf,
    pub real_pool: Vec<PoolItem>,
    pub synthetic_pool: Vec<PoolItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: String,
    pub config: ExperimentConfig,
    pub detector: String,
    pub manifest: DatasetManifest,
    pub composition: Composition,
    pub test_images: usize,
    /// Box-mode evaluation; the headline figures.
    pub eval: EvalReport,
    pub eval_mask: EvalReport,
    /// Box mAP@[.50:.95] as a fraction.
    pub map_value: f64,
    pub lift_vs_baseline: Option<f64>,
    /// Health confusion at IoU 0.5 after the confidence floor.
    pub confusion: HealthConfusion,
    pub class_metrics: ClassMetrics,
}

impl ExperimentResult {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            name: self.name.clone(),
            real_train: self.config.real_train,
            synthetic_train: self.config.synthetic_train,
            resolution_tier: self.config.resolution_tier,
            map_percent: 100.0 * self.map_value,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ProgressLine {
    image_id: u64,
    detections: Vec<Detection>,
}

fn config_key(cfg: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(cfg).expect("config serializes")))
}

/// Completed images from an earlier interrupted run of the same config.
/// Unparsable lines are recomputed.
fn load_progress(dir: &Path, key: &str) -> HashMap<u64, Vec<Detection>> {
    let same_config = fs::read_to_string(dir.join(PROGRESS_KEY_FILE)).is_ok_and(|k| k.trim() == key);
    if !same_config {
        return HashMap::new();
    }
    let Ok(text) = fs::read_to_string(dir.join(PROGRESS_FILE)) else {
        return HashMap::new();
    };
    let complete = text.rfind('\n').map_or("", |i| &text[..i]);
    complete
        .lines()
        .filter_map(|l| serde_json::from_str::<ProgressLine>(l).ok())
        .map(|p| (p.image_id, p.detections))
        .collect()
}

pub fn load_result(results_dir: &Path, name: &str) -> Result<ExperimentResult> {
    let path = results_dir.join(name).join(REPORT_FILE);
    let bytes = fs::read(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ExperimentError::UnknownBaseline(name.to_string()),
        _ => io_err(&path)(e),
    })?;
    serde_json::from_slice(&bytes).map_err(|e| ExperimentError::BadConfig(format!("{}: {e}", path.display())))
}

/// Every persisted result, sorted by name.
pub fn list_results(results_dir: &Path) -> Result<Vec<ExperimentResult>> {
    let mut out = Vec::new();
    let entries = match fs::read_dir(results_dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(io_err(results_dir)(e)),
    };
    for entry in entries {
        let entry = entry.map_err(io_err(results_dir))?;
        if entry.path().join(REPORT_FILE).is_file() {
            out.push(load_result(results_dir, &entry.file_name().to_string_lossy())?);
        }
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Builds the training manifest, runs the detector over every test image,
/// scores the output and persists `results/<name>/report.json`.
///
/// Per-image detections are appended to `progress.jsonl` as they finish, so
/// a rerun of the same config after an interruption only processes the
/// remaining images.
pub fn run_experiment(cfg: &ExperimentConfig, ws: &Workspace) -> Result<ExperimentResult> {
    cfg.validate()?;
    let baseline = match &cfg.baseline {
        Some(b) if b != &cfg.name => Some(load_result(&ws.results_dir, b)?),
        _ => None,
    };
    let test = TestSet::load(&cfg.test_manifest)?;
    let test_ids: HashSet<&str> = test.manifest.ids();
    let manifest = build_manifest(&ws.real_pool, &ws.synthetic_pool, cfg, &test_ids)?;
    let detector = cfg.detector.build()?;

    let out_dir = ws.results_dir.join(&cfg.name);
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let key = config_key(cfg);
    let mut done = load_progress(&out_dir, &key);
    let progress_path = out_dir.join(PROGRESS_FILE);
    if done.is_empty() {
        fs::write(out_dir.join(PROGRESS_KEY_FILE), &key).map_err(io_err(&out_dir))?;
        fs::write(&progress_path, b"").map_err(io_err(&progress_path))?;
    } else {
        tracing::info!(experiment = %cfg.name, resumed = done.len(), "resuming");
    }
    let progress = Mutex::new(
        OpenOptions::new()
            .append(true)
            .open(&progress_path)
            .map_err(io_err(&progress_path))?,
    );

    let by_image: HashMap<u64, Vec<InstanceAnnotation>> = test.annotations.by_image();
    let pending: Vec<(usize, &crate::coco::ImageEntry)> = test
        .annotations
        .images
        .iter()
        .enumerate()
        .filter(|(_, img)| !done.contains_key(&img.id))
        .collect();
    let fresh = pending
        .par_iter()
        .map(|&(index, img)| {
            let path = test.image_path(&img.file_name);
            let gts = by_image.get(&img.id).map(Vec::as_slice).unwrap_or(&[]);
            let input = DetectInput {
                image_id: img.id,
                image_index: index as u64,
                width: img.width,
                height: img.height,
                ground_truth: gts,
                categories: &test.annotations.categories,
                image_path: Some(&path),
            };
            let mut detections = detector.detect(&input)?;
            for d in &mut detections {
                d.image_id = img.id;
            }
            let mut line = serde_json::to_vec(&ProgressLine {
                image_id: img.id,
                detections: detections.clone(),
            })
            .expect("detections serialize");
            line.push(b'\n');
            progress.lock().write_all(&line).map_err(io_err(&progress_path))?;
            Ok((img.id, detections))
        })
        .collect::<Result<Vec<_>>>()?;
    done.extend(fresh);

    // evaluation order follows the test set, not completion order
    let ordered: BTreeMap<usize, &Vec<Detection>> = test
        .annotations
        .images
        .iter()
        .enumerate()
        .filter_map(|(i, img)| done.get(&img.id).map(|d| (i, d)))
        .collect();
    let all: Vec<Detection> = ordered.values().flat_map(|d| d.iter().cloned()).collect();
    let dets = cap_detections(&all, DEFAULT_MAX_PER_IMAGE);
    let gts = &test.annotations.annotations;
    let dims = test.annotations.dims();
    let eval = mean_average_precision(&dets, gts, EvalMode::Box, &dims)?;
    let eval_mask = mean_average_precision(&dets, gts, EvalMode::Mask, &dims)?;
    let confusion = corpus_confusion(
        &dets,
        gts,
        &test.annotations.categories,
        CONFUSION_IOU,
        DEFAULT_CONFIDENCE,
        EvalMode::Box,
        &dims,
    )?;
    let map_value = eval.map_50_95;
    let lift_vs_baseline = match &baseline {
        Some(b) => Some(lift_percent(b.map_value, map_value)?),
        None => None,
    };
    let result = ExperimentResult {
        name: cfg.name.clone(),
        config: cfg.clone(),
        detector: detector.descriptor(),
        composition: manifest.composition.clone(),
        manifest,
        test_images: test.annotations.images.len(),
        eval,
        eval_mask,
        map_value,
        lift_vs_baseline,
        class_metrics: class_metrics(&confusion),
        confusion,
    };
    let body = serde_json::to_vec_pretty(&result).expect("result serializes");
    write_atomic(&out_dir.join(REPORT_FILE), &body)?;
    drop(progress);
    let _ = fs::remove_file(&progress_path);
    let _ = fs::remove_file(out_dir.join(PROGRESS_KEY_FILE));
    Ok(result)
}
