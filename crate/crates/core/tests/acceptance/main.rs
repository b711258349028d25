//! Acceptance suite. Each criterion runs against an oracle written here,
//! independently of the library, and prints one PASS or FAIL line.

mod oracles;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Cursor;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use polescan_core::coco::{standard_categories, BBox, InstanceAnnotation};
use polescan_core::dataset::Provenance;
use polescan_core::detector::{oracle_detect, DetectorHandle, OracleParams};
use polescan_core::experiments::{
    build_manifest, compare_to_baseline, run_experiment, ExperimentConfig, PoolItem, RunSummary, Workspace,
};
use polescan_core::metrics::{
    average_precision, box_iou, class_metrics, mask_iou, mean_average_precision, Detection, EvalMode,
    HealthConfusion, ImageDims,
};
use polescan_core::synthgen::{
    generate_batch, label_fidelity, render_scene, sample_scene, GenConfig, GeneratedBatch, COCO_FILE, IMAGES_DIR,
};
use polescan_core::tracker::{
    IngestMeta, LifecycleState, LocalBlobStore, RoutingPolicy, Tracker, Verdict, VerificationDecision, WatchOutcome,
    Watcher,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oracles::{
    area_iou, chain_is_legal, complement_range, numerator_range, perfect_at_half, pixel_iou, rasterize_centers,
    ratio_rounds_to, ref_ap, Rect,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($fmt)+));
        }
    };
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { name: "lift_arithmetic", budget: Duration::from_secs(1), run: lift_arithmetic },
        Criterion { name: "confusion_ratio_consistency", budget: Duration::from_secs(60), run: confusion_ratio_consistency },
        Criterion { name: "map_oracle_equivalence", budget: Duration::from_secs(30), run: map_oracle },
        Criterion { name: "iou_analytics", budget: Duration::from_secs(5), run: iou_analytics },
        Criterion { name: "synthgen_fidelity_determinism", budget: Duration::from_secs(120), run: synthgen_fidelity },
        Criterion { name: "pipeline_end_to_end", budget: Duration::from_secs(120), run: pipeline },
        Criterion { name: "experiment_series_structure", budget: Duration::from_secs(300), run: experiment_series_structure },
        Criterion { name: "tracker_concurrency_safety", budget: Duration::from_secs(60), run: tracker_concurrency },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| filter.is_empty() || filter.iter().any(|f| c.name.contains(f.as_str()))) {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let result = match result {
            Ok(d) if start.elapsed() > c.budget => {
                Err(format!("{d}; runtime {secs:.2}s exceeds {:.0}s", c.budget.as_secs_f64()))
            }
            r => r,
        };
        match result {
            Ok(d) => println!("PASS {} ({d}; {secs:.2}s)", c.name),
            Err(e) => {
                failed += 1;
                println!("FAIL {} ({e}; {secs:.2}s)", c.name);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn lift_arithmetic() -> Outcome {
    let rows = [
        ("Baseline", 393, 0, 20.58, None),
        ("Exp1", 393, 393, 25.64, Some(24.60)),
        ("Exp2", 393, 786, 27.22, Some(32.27)),
        ("Exp3", 393, 1965, 27.98, Some(35.96)),
        ("Exp4", 393, 1965, 34.36, Some(66.96)),
    ];
    let runs: Vec<RunSummary> = rows
        .iter()
        .map(|&(name, real, synth, map, _)| RunSummary {
            name: name.into(),
            real_train: real,
            synthetic_train: synth,
            resolution_tier: None,
            map_percent: map,
        })
        .collect();
    let cmp = compare_to_baseline(&runs, "Baseline").map_err(|e| e.to_string())?;
    ensure!(cmp.rows.len() == rows.len(), "{} rows", cmp.rows.len());
    let mut got = Vec::new();
    for (row, &(name, _, _, _, expected)) in cmp.rows.iter().zip(&rows) {
        ensure!(row.name == name, "row order: {} where {name} expected", row.name);
        match (row.lift_percent, expected) {
            (None, None) => {}
            (Some(l), Some(p)) => {
                ensure!((l - p).abs() <= 0.02, "{name}: lift {l:.4} vs {p}");
                got.push(format!("{l:.2}"));
            }
            (l, p) => return Err(format!("{name}: lift {l:?} vs {p:?}")),
        }
    }
    Ok(format!("lifts {}", got.join(", ")))
}

fn confusion_ratio_consistency() -> Outcome {
    const TOTAL: u64 = 10_230;
    let (ph, rh, pd, rd) = (9589, 8907, 5812, 7987);
    let mut found: Option<(u64, u64, u64, u64)> = None;
    let mut solutions = 0;
    for th in 1..=TOTAL {
        for fd in complement_range(th, rh) {
            for fh in complement_range(th, ph) {
                if th + fd + fh >= TOTAL {
                    continue;
                }
                for td in numerator_range(fd, pd).filter(|&td| th + fd + fh + td <= TOTAL) {
                    if ratio_rounds_to(td, td + fh, rd) {
                        solutions += 1;
                        let total = th + fd + fh + td;
                        if found.is_none_or(|(a, b, c, d)| total < a + b + c + d) {
                            found = Some((th, fd, fh, td));
                        }
                    }
                }
            }
        }
    }
    let (th, fd, fh, td) = found.ok_or("no confusion matrix within the instance budget")?;
    let m = class_metrics(&HealthConfusion::from_cells(th, fd, fh, td));
    let pairs = [
        ("healthy precision", m.precision_healthy, 0.9589),
        ("healthy recall", m.recall_healthy, 0.8907),
        ("defective precision", m.precision_defective, 0.5812),
        ("defective recall", m.recall_defective, 0.7987),
    ];
    for (label, got, expected) in pairs {
        ensure!((got - expected).abs() <= 0.005, "{label}: {got:.4} vs {expected}");
    }
    Ok(format!(
        "{solutions} matrices fit; smallest TH={th} FD={fd} FH={fh} TD={td} ({} instances)",
        th + fd + fh + td
    ))
}

fn random_micro_instance(rng: &mut ChaCha8Rng) -> (Vec<Detection>, Vec<InstanceAnnotation>, ImageDims) {
    let n_images = rng.random_range(1..=5u64);
    let coarse = rng.random_bool(0.5);
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    let mut dims = ImageDims::new();
    let mut next_id = 1;
    let rect = |rng: &mut ChaCha8Rng| {
        let x = rng.random_range(0..12) as f64;
        let y = rng.random_range(0..12) as f64;
        (x, y, rng.random_range(1..=6) as f64, rng.random_range(1..=6) as f64)
    };
    for image_id in 1..=n_images {
        dims.insert(image_id, (20, 20));
        for _ in 0..rng.random_range(0..=4) {
            let (x, y, w, h) = rect(rng);
            let ring = vec![x, y, x + w, y, x + w, y + h, x, y + h];
            gts.push(InstanceAnnotation::from_rings(next_id, image_id, rng.random_range(1..=4), vec![ring], 20, 20));
            next_id += 1;
        }
        for _ in 0..rng.random_range(0..=6) {
            let (x, y, w, h) = rect(rng);
            let confidence = if coarse {
                f64::from(rng.random_range(1..=4u8)) / 4.0
            } else {
                rng.random_range(0.0..1.0)
            };
            dets.push(Detection {
                image_id,
                category_id: rng.random_range(1..=4),
                bbox: BBox::new(x, y, w, h),
                segmentation: None,
                confidence,
            });
        }
    }
    (dets, gts, dims)
}

fn map_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x00a9);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for case in 0..200 {
        let (dets, gts, dims) = random_micro_instance(&mut rng);
        let report = mean_average_precision(&dets, &gts, EvalMode::Box, &dims).map_err(|e| e.to_string())?;
        ensure!(report.ap_per_iou.len() == 10, "case {case}: {} thresholds", report.ap_per_iou.len());
        let mut sum = 0.0;
        for (k, entry) in report.ap_per_iou.iter().enumerate() {
            let t = entry.iou_threshold;
            ensure!((t - (0.5 + 0.05 * k as f64)).abs() < 1e-12, "threshold {k} is {t}");
            let want = ref_ap(&dets, &gts, t);
            let single = average_precision(&dets, &gts, t, None, EvalMode::Box, &dims).map_err(|e| e.to_string())?;
            for got in [single, entry.ap] {
                let err = (got - want).abs();
                worst = worst.max(err);
                ensure!(err <= 1e-9, "case {case} IoU {t}: AP {got} vs oracle {want}\n{dets:?}\n{gts:?}");
            }
            sum += want;
            checked += 1;
        }
        let err = (report.map_50_95 - sum / 10.0).abs();
        worst = worst.max(err);
        ensure!(err <= 1e-9, "case {case}: mAP {} vs oracle {}", report.map_50_95, sum / 10.0);
    }
    Ok(format!("200 instances, {checked} AP values, max error {worst:.1e}"))
}

fn iou_analytics() -> Outcome {
    let a = BBox::new(0.0, 0.0, 2.0, 2.0);
    let b = BBox::new(1.0, 1.0, 2.0, 2.0);
    let got = box_iou(&a, &b).map_err(|e| e.to_string())?;
    ensure!(got == 1.0 / 7.0, "box hand case {got}");
    let sq = |x0: f64, x1: f64| vec![vec![x0, 0.0, x1, 0.0, x1, 2.0, x0, 2.0]];
    let got = mask_iou(&sq(0.0, 2.0), &sq(1.0, 3.0), 4, 4).map_err(|e| e.to_string())?;
    ensure!(got == 1.0 / 3.0, "mask hand case {got}");

    let mut rng = ChaCha8Rng::seed_from_u64(0x1007);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let r = |rng: &mut ChaCha8Rng| Rect {
            x: rng.random_range(0.0..20.0),
            y: rng.random_range(0.0..20.0),
            w: rng.random_range(0.01..12.0),
            h: rng.random_range(0.01..12.0),
        };
        let (p, q) = (r(&mut rng), r(&mut rng));
        let got = box_iou(&BBox::new(p.x, p.y, p.w, p.h), &BBox::new(q.x, q.y, q.w, q.h)).map_err(|e| e.to_string())?;
        let err = (got - area_iou(&p, &q)).abs();
        worst = worst.max(err);
        ensure!(err <= 1e-12, "box pair {i}: {got} vs {}", area_iou(&p, &q));

        let ri = |rng: &mut ChaCha8Rng| Rect {
            x: f64::from(rng.random_range(0..24u8)),
            y: f64::from(rng.random_range(0..24u8)),
            w: f64::from(rng.random_range(1..=8u8)),
            h: f64::from(rng.random_range(1..=8u8)),
        };
        let (p, q) = (ri(&mut rng), ri(&mut rng));
        let got = mask_iou(&[p.ring()], &[q.ring()], 32, 32).map_err(|e| e.to_string())?;
        let err = (got - area_iou(&p, &q)).abs();
        worst = worst.max(err);
        ensure!(err <= 1e-12, "mask pair {i}: {got} vs {}", area_iou(&p, &q));
    }
    Ok(format!("hand cases exact, 1000 box + 1000 mask pairs, max error {worst:.1e}"))
}

fn gen_config(name: &str, side: u32, n: u64, seed: u64) -> GenConfig {
    GenConfig {
        image_width: side,
        image_height: side,
        n_images: n,
        master_seed: seed,
        name: name.into(),
        ..GenConfig::default()
    }
}

fn synthgen_fidelity() -> Outcome {
    let cfg = gen_config("fidelity", 256, 100, 2024);
    let mut worst = f64::INFINITY;
    let mut instances = 0;
    for index in 0..cfg.n_images {
        let spec = sample_scene(cfg.master_seed, index, &cfg).map_err(|e| e.to_string())?;
        let scene = render_scene(&spec, &cfg).map_err(|e| e.to_string())?;
        let (w, h) = scene.image.dimensions();
        let lib = label_fidelity(&scene);
        for (k, ann) in scene.annotations.iter().enumerate() {
            let labeled = rasterize_centers(&ann.segmentation, w, h);
            let rendered: Vec<bool> = scene.instance_map.iter().map(|&o| usize::from(o) == k + 1).collect();
            let iou = pixel_iou(&labeled, &rendered);
            ensure!(iou >= 0.99, "scene {index} instance {k}: IoU {iou:.4}");
            ensure!((iou - lib[k]).abs() < 1e-9, "scene {index} instance {k}: library reports {}", lib[k]);
            worst = worst.min(iou);
            instances += 1;
        }
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    generate_batch(&cfg, &dir.path().join("a")).map_err(|e| e.to_string())?;
    generate_batch(&cfg, &dir.path().join("b")).map_err(|e| e.to_string())?;
    let read = |sub: &str| std::fs::read(dir.path().join(sub).join(COCO_FILE)).map_err(|e| e.to_string());
    ensure!(read("a")? == read("b")?, "COCO output differs between runs");
    for name in std::fs::read_dir(dir.path().join("a").join(IMAGES_DIR)).map_err(|e| e.to_string())? {
        let name = name.map_err(|e| e.to_string())?.file_name();
        let img = |sub: &str| std::fs::read(dir.path().join(sub).join(IMAGES_DIR).join(&name)).ok();
        ensure!(img("a") == img("b"), "{name:?} differs between runs");
    }
    Ok(format!("{instances} instances, min IoU {worst:.4}, byte-identical rerun"))
}

fn pipeline() -> Outcome {
    const N: usize = 200;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let blob_root = dir.path().join("blobs");
    let batch = generate_batch(&gen_config("drone", 128, N as u64, 88), &blob_root.join("drone"))
        .map_err(|e| e.to_string())?;
    let gt_by_name = gt_by_file_name(&batch);

    FIXED_CLOCK.store(FIXED_EPOCH_MS, Ordering::SeqCst);
    let tracker = Tracker::open_with_clock(dir.path().join("tracker"), false, fixed_clock).map_err(|e| e.to_string())?;
    let store = LocalBlobStore::new(&blob_root);
    let mut watcher = Watcher::new(format!("drone/{IMAGES_DIR}"), IngestMeta::default());
    let outcomes = watcher.poll_once(&store, &tracker).map_err(|e| e.to_string())?;
    let ingested = outcomes.iter().filter(|o| matches!(o, WatchOutcome::Ingested { .. })).count();
    ensure!(ingested == N, "ingested {ingested} of {N}: {outcomes:?}");

    let policy = RoutingPolicy {
        labeling_fraction: 0.2,
        salt: "acceptance".into(),
        override_target: None,
    };
    for r in tracker.list(Some(LifecycleState::Incoming)) {
        tracker.route_image(&r.image_id, &policy, None).map_err(|e| e.to_string())?;
    }
    let labeling = tracker.list(Some(LifecycleState::Labeling)).len();
    let share = labeling as f64 / N as f64;
    ensure!((share - 0.2).abs() <= 0.06, "labeling share {share:.3}");

    let params = OracleParams {
        miss_rate: 0.2,
        fp_per_image: 0.5,
        seed: 5,
        ..OracleParams::default()
    };
    let categories = standard_categories();
    let mut incorrect = 0;
    for r in tracker.list(Some(LifecycleState::BatchPrediction)) {
        let file_name = r.uri.rsplit('/').next().unwrap_or_default();
        let gts = gt_by_name.get(file_name).ok_or(format!("no ground truth for {}", r.uri))?;
        let dets = oracle_detect(gts, (r.width, r.height), &categories, &params, r.ordinal).map_err(|e| e.to_string())?;
        let verdict = if perfect_at_half(&dets, gts) { Verdict::Correct } else { Verdict::Incorrect };
        tracker.record_inference(&r.image_id, dets, "oracle", Some(r.state_version)).map_err(|e| e.to_string())?;
        if verdict == Verdict::Incorrect {
            incorrect += 1;
        }
        let decision = VerificationDecision {
            image_id: r.image_id.clone(),
            verdict,
            reviewer: "auto".into(),
            notes: String::new(),
            at: 0,
        };
        tracker.apply_verdict(decision, None).map_err(|e| e.to_string())?;
    }
    let staged = tracker.list(Some(LifecycleState::Staging)).len();
    ensure!(staged == incorrect, "staged {staged} vs incorrect {incorrect}");
    ensure!(tracker.list(Some(LifecycleState::Verification)).is_empty(), "undecided images remain");

    check_census(&tracker, N)?;
    check_histories(&tracker)?;
    let census = tracker.census();
    Ok(format!(
        "labeling share {share:.3}, verified {}, staged {staged}",
        census[&LifecycleState::Verified]
    ))
}

const FIXED_EPOCH_MS: u64 = 1_767_225_600_000;
static FIXED_CLOCK: AtomicU64 = AtomicU64::new(FIXED_EPOCH_MS);

/// Advances one millisecond per reading, so image ids and routing repeat
/// across runs.
fn fixed_clock() -> u64 {
    FIXED_CLOCK.fetch_add(1, Ordering::SeqCst)
}

fn gt_by_file_name(batch: &GeneratedBatch) -> HashMap<String, Vec<InstanceAnnotation>> {
    let grouped = batch.annotations.by_image();
    batch
        .annotations
        .images
        .iter()
        .map(|img| (img.file_name.clone(), grouped.get(&img.id).cloned().unwrap_or_default()))
        .collect()
}

/// Census totals match the image count and the per-state listings.
fn check_census(tracker: &Tracker, n: usize) -> Result<(), String> {
    let census = tracker.census();
    ensure!(census.values().sum::<usize>() == n, "census {census:?} does not sum to {n}");
    let records = tracker.list(None);
    ensure!(records.len() == n, "{} records", records.len());
    let mut counted: BTreeMap<LifecycleState, usize> = BTreeMap::new();
    for r in &records {
        *counted.entry(r.state).or_default() += 1;
    }
    for (state, count) in census {
        let listed = counted.get(&state).copied().unwrap_or(0);
        ensure!(listed == count, "{state:?}: census {count}, listed {listed}");
    }
    Ok(())
}

/// Every image's persisted chain is legal, gap-free and ends at its record.
fn check_histories(tracker: &Tracker) -> Result<(), String> {
    for r in tracker.list(None) {
        let history = tracker.image_history(&r.image_id).map_err(|e| e.to_string())?;
        let end = chain_is_legal(&history).map_err(|e| format!("{}: {e}", r.image_id))?;
        ensure!(end == (r.state, r.state_version), "{}: replay {end:?} vs {:?}", r.image_id, (r.state, r.state_version));
    }
    Ok(())
}

fn experiment_series_structure() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let generate = |name: &str, side, n, seed| generate_batch(&gen_config(name, side, n, seed), &root.join(name));
    let real = generate("realrole", 64, 400, 101).map_err(|e| e.to_string())?;
    let synth = generate("synthrole", 64, 2000, 202).map_err(|e| e.to_string())?;
    generate("heldout", 128, 100, 303).map_err(|e| e.to_string())?;
    let ws = Workspace {
        results_dir: root.join("results"),
        real_pool: PoolItem::from_coco(&real.annotations, Provenance::Real),
        synthetic_pool: PoolItem::from_coco(&synth.annotations, Provenance::Synthetic),
    };
    let test_ids: HashSet<&str> = HashSet::new();

    let plan = [("Baseline", 0), ("Exp1", 393), ("Exp2", 786), ("Exp3", 1965), ("Exp4", 1965)];
    let mut maps = Vec::new();
    let mut lifts = Vec::new();
    for (name, synthetic) in plan {
        let params = OracleParams {
            miss_rate: 0.5 - 0.3 * synthetic as f64 / 1965.0,
            fp_per_image: 0.5,
            box_jitter_sigma: 1.0,
            seed: 17,
            ..OracleParams::default()
        };
        let cfg = ExperimentConfig {
            name: name.into(),
            real_train: 393,
            synthetic_train: synthetic,
            resolution_tier: None,
            detector: DetectorHandle::oracle(params),
            test_manifest: root.join("heldout"),
            seed: 9,
            baseline: Some("Baseline".into()),
        };
        let manifest = build_manifest(&ws.real_pool, &ws.synthetic_pool, &cfg, &test_ids).map_err(|e| e.to_string())?;
        let count = |p: Provenance| manifest.entries.iter().filter(|e| e.provenance == p).count();
        let got = (count(Provenance::Real), count(Provenance::Synthetic));
        ensure!(got == (393, synthetic), "{name}: manifest holds {got:?}");
        let ids: HashSet<&str> = manifest.entries.iter().map(|e| e.image_id.as_str()).collect();
        ensure!(ids.len() == manifest.entries.len(), "{name}: duplicate manifest entries");

        let result = run_experiment(&cfg, &ws).map_err(|e| e.to_string())?;
        ensure!(result.manifest == manifest, "{name}: run used a different manifest");
        maps.push((name, result.map_value));
        if let Some(l) = result.lift_vs_baseline {
            ensure!(l > 0.0, "{name}: lift {l:.2}% is not positive");
            lifts.push(format!("{l:.1}%"));
        }
    }
    for pair in maps[..4].windows(2) {
        ensure!(pair[1].1 >= pair[0].1, "mAP fell from {} {:.4} to {} {:.4}", pair[0].0, pair[0].1, pair[1].0, pair[1].1);
    }
    let shown: Vec<String> = maps.iter().map(|(n, m)| format!("{n} {:.2}", m * 100.0)).collect();
    Ok(format!("mAP {}; lifts {}", shown.join(", "), lifts.join(", ")))
}

fn png(seed: u32) -> Vec<u8> {
    let img = image::RgbImage::from_fn(16, 16, |x, y| image::Rgb([(seed % 256) as u8, (seed / 256) as u8, (x * 16 + y) as u8]));
    let mut out = Vec::new();
    img.write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png).expect("encode");
    out
}

fn tracker_concurrency() -> Outcome {
    const IMAGES: usize = 100;
    const WORKERS: u64 = 8;
    const OPS: usize = 400;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let tracker = Arc::new(Tracker::open(dir.path()).map_err(|e| e.to_string())?);
    let mut ids = Vec::new();
    for i in 0..IMAGES as u32 {
        let r = tracker.ingest_bytes(&format!("img/{i}.png"), &png(i), IngestMeta::default()).map_err(|e| e.to_string())?;
        ids.push(r.image_id);
    }
    let ids = Arc::new(ids);
    let label = InstanceAnnotation::from_rings(1, 0, 1, vec![vec![1.0, 1.0, 9.0, 1.0, 9.0, 6.0, 1.0, 6.0]], 16, 16);
    let barrier = Arc::new(std::sync::Barrier::new(WORKERS as usize));
    let handles: Vec<_> = (0..WORKERS)
        .map(|w| {
            let (tracker, ids, barrier, label) = (tracker.clone(), ids.clone(), barrier.clone(), label.clone());
            std::thread::spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(w);
                let (mut ok, mut rejected) = (0usize, 0usize);
                barrier.wait();
                for _ in 0..OPS {
                    let id = &ids[rng.random_range(0..ids.len())];
                    let stale = rng.random_bool(0.3).then(|| rng.random_range(0..6u64));
                    let res = match rng.random_range(0..100) {
                        0..=19 => {
                            let target = if rng.random_bool(0.5) { LifecycleState::Labeling } else { LifecycleState::BatchPrediction };
                            let policy = RoutingPolicy { labeling_fraction: 0.0, salt: String::new(), override_target: Some(target) };
                            tracker.route_image(id, &policy, stale).map(drop)
                        }
                        20..=39 => tracker.record_inference(id, vec![], "w", stale).map(drop),
                        40..=59 => {
                            let verdict = if rng.random_bool(0.5) { Verdict::Correct } else { Verdict::Incorrect };
                            let d = VerificationDecision { image_id: id.clone(), verdict, reviewer: format!("w{w}"), notes: String::new(), at: 0 };
                            tracker.apply_verdict(d, stale).map(drop)
                        }
                        60..=74 => {
                            let batch: Vec<String> = (0..rng.random_range(1..4)).map(|_| ids[rng.random_range(0..ids.len())].clone()).collect();
                            tracker.promote_staging(&batch, "ops").map(drop)
                        }
                        75..=94 => tracker.complete_labeling(id, vec![label.clone()], "labeler", stale).map(drop),
                        _ => tracker.archive(id, "ops", "retired", stale).map(drop),
                    };
                    match res {
                        Ok(()) => ok += 1,
                        Err(_) => rejected += 1,
                    }
                }
                (ok, rejected)
            })
        })
        .collect();
    let (mut ok, mut rejected) = (0, 0);
    for h in handles {
        let (a, b) = h.join().map_err(|_| "worker panicked".to_string())?;
        ok += a;
        rejected += b;
    }
    ensure!(rejected > 0 && ok > 0, "workload exercised only one path: {ok} ok, {rejected} rejected");

    let events = tracker.all_events();
    let mut per_image: HashMap<&str, Vec<_>> = HashMap::new();
    for e in &events {
        per_image.entry(e.image_id.as_str()).or_default().push(e.clone());
    }
    ensure!(per_image.len() == IMAGES, "{} images have events", per_image.len());
    for chain in per_image.values_mut() {
        chain.sort_by_key(|e| e.version_after);
        chain_is_legal(chain)?;
    }
    check_census(&tracker, IMAGES)?;
    check_histories(&tracker)?;

    let before: Vec<_> = tracker.list(None).into_iter().map(|r| (r.image_id, r.state, r.state_version)).collect();
    drop(tracker);
    let reopened = Tracker::open(dir.path()).map_err(|e| e.to_string())?;
    let after: Vec<_> = reopened.list(None).into_iter().map(|r| (r.image_id, r.state, r.state_version)).collect();
    ensure!(before == after, "state differs after replaying the log");
    check_histories(&reopened)?;
    Ok(format!("{} events persisted, {ok} accepted, {rejected} rejected", events.len()))
}
