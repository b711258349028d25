//! Commands that run against local files without the service.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use polescan_core::coco::{parse_coco, standard_categories, AnnotationSet, InstanceAnnotation};
use polescan_core::dataset::{DatasetManifest, Provenance};
use polescan_core::experiments::{
    compare_to_baseline, list_results, qc_report, run_experiment, Comparison, ExperimentConfig, ExperimentResult,
    PoolItem, QcBounds, QcReport, Workspace,
};
use polescan_core::metrics::{
    cap_detections, class_metrics, corpus_confusion, mean_average_precision, ClassMetrics, Detection, EvalMode,
    EvalReport, HealthConfusion,
};
use polescan_core::synthgen::{generate_batch, GenConfig, GeneratedBatch, COCO_FILE};
use polescan_core::tracker::Tracker;
use serde::{Deserialize, Serialize};

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_coco(path: &Path) -> Result<AnnotationSet> {
    parse_coco(&read(path)?).with_context(|| format!("invalid COCO file {}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub mode: EvalMode,
    pub confidence: f64,
    pub max_per_image: usize,
    pub iou_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub confidence: f64,
    pub max_per_image: usize,
    pub confusion_iou: f64,
    pub eval: EvalReport,
    pub confusion: HealthConfusion,
    pub class_metrics: ClassMetrics,
}

impl EvalOutput {
    pub fn to_text(&self) -> String {
        let e = &self.eval;
        let m = &self.class_metrics;
        let mut s = format!(
            "mode: {:?}\ndetections: {}  ground truth: {}\nmAP@[.50:.95]: {:.4}  AP50: {:.4}  AP75: {:.4}\n",
            e.mode, e.num_detections, e.num_ground_truth, e.map_50_95, e.ap50, e.ap75
        );
        s += &format!("best F1: {:.4} at confidence {:.2}\n", e.best_f1(), e.optimal_threshold);
        let c = &self.confusion;
        s += &format!(
            "confusion at IoU {} and confidence {}: TH={} FD={} FH={} TD={}\n",
            self.confusion_iou, self.confidence, c.true_healthy, c.false_defective, c.false_healthy, c.true_defective
        );
        s += &format!(
            "healthy P/R/F1: {:.4}/{:.4}/{:.4}  defective P/R/F1: {:.4}/{:.4}/{:.4}\n",
            m.precision_healthy, m.recall_healthy, m.f1_healthy, m.precision_defective, m.recall_defective, m.f1_defective
        );
        s
    }
}

/// Scores a COCO results file against ground truth.
pub fn eval(gt_path: &Path, det_path: &Path, opts: EvalOptions) -> Result<EvalOutput> {
    let gt = load_coco(gt_path)?;
    let dets: Vec<Detection> = serde_json::from_slice(&read(det_path)?)
        .with_context(|| format!("invalid detections file {}", det_path.display()))?;
    let dets = cap_detections(&dets, opts.max_per_image);
    let dims = gt.dims();
    let report = mean_average_precision(&dets, &gt.annotations, opts.mode, &dims)?;
    let confusion = corpus_confusion(
        &dets,
        &gt.annotations,
        &gt.categories,
        opts.iou_threshold,
        opts.confidence,
        opts.mode,
        &dims,
    )?;
    Ok(EvalOutput {
        confidence: opts.confidence,
        max_per_image: opts.max_per_image,
        confusion_iou: opts.iou_threshold,
        eval: report,
        class_metrics: class_metrics(&confusion),
        confusion,
    })
}

/// `<out>` with the F1 table next to it as `<stem>.f1.csv`.
pub fn write_eval(out: &Path, output: &EvalOutput) -> Result<PathBuf> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, serde_json::to_vec_pretty(output)?).with_context(|| format!("cannot write {}", out.display()))?;
    let csv = out.with_extension("f1.csv");
    std::fs::write(&csv, output.eval.f1_csv()).with_context(|| format!("cannot write {}", csv.display()))?;
    Ok(csv)
}

/// Reads a TOML generator config; absent fields take their defaults.
pub fn load_gen_config(path: Option<&Path>) -> Result<GenConfig> {
    match path {
        Some(p) => toml::from_str(&read_text(p)?).with_context(|| format!("invalid generator config {}", p.display())),
        None => Ok(GenConfig::default()),
    }
}

pub fn generate(cfg: &GenConfig, out: &Path) -> Result<GeneratedBatch> {
    Ok(generate_batch(cfg, out)?)
}

/// Reads a dataset manifest, or the training manifest inside a persisted
/// experiment report.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = read(path)?;
    if let Ok(m) = serde_json::from_slice::<DatasetManifest>(&bytes) {
        return Ok(m);
    }
    let r: ExperimentResult = serde_json::from_slice(&bytes)
        .with_context(|| format!("{} is neither a manifest nor an experiment report", path.display()))?;
    Ok(r.manifest)
}

/// QC over a manifest whose ids are COCO `file_name`s of the given sets.
/// With no sets, `annotations.json` next to the manifest is used.
pub fn qc(manifest_path: &Path, annotation_paths: &[PathBuf], bounds: QcBounds) -> Result<QcReport> {
    let manifest = load_manifest(manifest_path)?;
    let paths: Vec<PathBuf> = if annotation_paths.is_empty() {
        let sibling = manifest_path.with_file_name(COCO_FILE);
        if !sibling.is_file() {
            bail!("no --annotations given and {} does not exist", sibling.display());
        }
        vec![sibling]
    } else {
        annotation_paths.to_vec()
    };
    let mut by_name: HashMap<String, Vec<InstanceAnnotation>> = HashMap::new();
    for p in &paths {
        let set = load_coco(p)?;
        let grouped = set.by_image();
        for img in &set.images {
            by_name.insert(img.file_name.clone(), grouped.get(&img.id).cloned().unwrap_or_default());
        }
    }
    Ok(qc_report(&manifest, &by_name, &standard_categories(), bounds)?)
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolsConfig {
    /// Generated batch directories used in the real role.
    #[serde(default)]
    pub real: Vec<PathBuf>,
    #[serde(default)]
    pub synthetic: Vec<PathBuf>,
    /// Tracker log directory whose training pool joins the real pool.
    #[serde(default)]
    pub real_tracker: Option<PathBuf>,
}

/// An experiment series. Each `[[experiments]]` table is an experiment
/// config; keys missing from it are taken from `[defaults]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesConfig {
    #[serde(default = "default_results")]
    pub results_dir: PathBuf,
    #[serde(default)]
    pub pools: PoolsConfig,
    #[serde(default)]
    pub defaults: toml::Table,
    pub experiments: Vec<toml::Table>,
}

fn default_results() -> PathBuf {
    PathBuf::from("results")
}

pub struct Series {
    pub workspace: Workspace,
    pub experiments: Vec<ExperimentConfig>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn pool_from(dirs: &[PathBuf], base: &Path, provenance: Provenance) -> Result<Vec<PoolItem>> {
    let mut out = Vec::new();
    for d in dirs {
        let set = load_coco(&resolve(base, d).join(COCO_FILE))?;
        out.extend(PoolItem::from_coco(&set, provenance));
    }
    Ok(out)
}

/// Loads a series file; relative paths are taken from the file's directory.
pub fn load_series(path: &Path) -> Result<Series> {
    let text = read_text(path)?;
    let cfg: SeriesConfig = toml::from_str(&text).with_context(|| format!("invalid series config {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut real_pool = pool_from(&cfg.pools.real, base, Provenance::Real)?;
    if let Some(t) = &cfg.pools.real_tracker {
        let tracker = Tracker::open(resolve(base, t))?;
        real_pool.extend(PoolItem::from_training_pool(&tracker.training_pool(), &standard_categories()));
    }
    let synthetic_pool = pool_from(&cfg.pools.synthetic, base, Provenance::Synthetic)?;
    let mut experiments = Vec::new();
    for table in cfg.experiments {
        let mut merged = cfg.defaults.clone();
        merged.extend(table);
        let mut e: ExperimentConfig = merged
            .try_into()
            .with_context(|| format!("invalid experiment in {}", path.display()))?;
        e.test_manifest = resolve(base, &e.test_manifest);
        experiments.push(e);
    }
    Ok(Series {
        workspace: Workspace {
            results_dir: resolve(base, &cfg.results_dir),
            real_pool,
            synthetic_pool,
        },
        experiments,
    })
}

/// Runs the series in file order, or only the named experiment.
pub fn run_series(series: &Series, only: Option<&str>) -> Result<Vec<ExperimentResult>> {
    let selected: Vec<&ExperimentConfig> = series
        .experiments
        .iter()
        .filter(|e| only.is_none_or(|n| n == e.name))
        .collect();
    if selected.is_empty() {
        bail!("no experiment named {}", only.unwrap_or_default());
    }
    selected
        .into_iter()
        .map(|e| run_experiment(e, &series.workspace).with_context(|| format!("experiment {} failed", e.name)))
        .collect()
}

/// Every persisted result compared against `baseline`, sorted by name with
/// the baseline first.
pub fn compare(results_dir: &Path, baseline: &str) -> Result<Comparison> {
    let mut summaries: Vec<_> = list_results(results_dir)?.iter().map(ExperimentResult::summary).collect();
    summaries.sort_by_key(|s| s.name != baseline);
    Ok(compare_to_baseline(&summaries, baseline)?)
}
