use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::index;

use super::{io_err, ExperimentConfig, ExperimentError, Result};
use crate::coco::{parse_coco, AnnotationSet, CategorySpec};
use crate::dataset::{DatasetManifest, ManifestEntry, Provenance, ResolutionTier, Split};
use crate::rng;
use crate::synthgen::{COCO_FILE, IMAGES_DIR, MANIFEST_FILE};
use crate::tracker::PoolImage;

const RNG_DOMAIN: &str = "polescan.experiments.v1";

/// One selectable training image.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolItem {
    /// COCO `file_name` for generated sets, tracker `image_id` for tracked
    /// images.
    pub key: String,
    pub provenance: Provenance,
    pub resolution_tier: ResolutionTier,
    /// Category name of every instance.
    pub categories: Vec<String>,
}

fn names_for(set: &AnnotationSet, image_id: u64, cats: &[CategorySpec]) -> Vec<String> {
    set.annotations
        .iter()
        .filter(|a| a.image_id == image_id)
        .filter_map(|a| cats.iter().find(|c| c.id == a.category_id).map(|c| c.name.clone()))
        .collect()
}

impl PoolItem {
    /// Every image of a COCO set, in the role given by `provenance`.
    pub fn from_coco(set: &AnnotationSet, provenance: Provenance) -> Vec<PoolItem> {
        set.images
            .iter()
            .map(|img| PoolItem {
                key: img.file_name.clone(),
                provenance,
                resolution_tier: ResolutionTier::from_dims(img.width, img.height),
                categories: names_for(set, img.id, &set.categories),
            })
            .collect()
    }

    /// Labeled images from the tracker's training pool.
    pub fn from_training_pool(pool: &[PoolImage], categories: &[CategorySpec]) -> Vec<PoolItem> {
        pool.iter()
            .map(|p| PoolItem {
                key: p.record.image_id.clone(),
                provenance: p.record.provenance,
                resolution_tier: p.record.resolution_tier,
                categories: p
                    .annotations
                    .iter()
                    .filter_map(|a| categories.iter().find(|c| c.id == a.category_id).map(|c| c.name.clone()))
                    .collect(),
            })
            .collect()
    }

    fn entry(&self) -> ManifestEntry {
        ManifestEntry {
            image_id: self.key.clone(),
            split: Split::Train,
            provenance: self.provenance,
            resolution_tier: self.resolution_tier,
            categories: self.categories.clone(),
        }
    }
}

/// A held-out evaluation set on disk, laid out like a generated batch.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub dir: PathBuf,
    pub annotations: AnnotationSet,
    /// Every entry has split `Test`.
    pub manifest: DatasetManifest,
}

impl TestSet {
    pub fn load(dir: &Path) -> Result<Self> {
        let coco_path = dir.join(COCO_FILE);
        let annotations = parse_coco(&std::fs::read(&coco_path).map_err(io_err(&coco_path))?)?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let entries: Vec<ManifestEntry> = match std::fs::read(&manifest_path) {
            Ok(bytes) => {
                let m: DatasetManifest = serde_json::from_slice(&bytes)
                    .map_err(|e| ExperimentError::BadConfig(format!("{}: {e}", manifest_path.display())))?;
                m.entries
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => PoolItem::from_coco(&annotations, Provenance::Synthetic)
                .iter()
                .map(PoolItem::entry)
                .collect(),
            Err(e) => return Err(io_err(&manifest_path)(e)),
        };
        let entries = entries
            .into_iter()
            .map(|e| ManifestEntry { split: Split::Test, ..e })
            .collect();
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: DatasetManifest::new(name, entries)?,
            annotations,
        })
    }

    pub fn image_path(&self, file_name: &str) -> PathBuf {
        self.dir.join(IMAGES_DIR).join(file_name)
    }
}

fn sample(
    pool: &[PoolItem],
    requested: usize,
    name: &str,
    cfg: &ExperimentConfig,
    excluded: &HashSet<&str>,
) -> Result<Vec<ManifestEntry>> {
    let eligible: Vec<&PoolItem> = pool
        .iter()
        .filter(|p| !excluded.contains(p.key.as_str()))
        .filter(|p| cfg.resolution_tier.is_none_or(|t| p.resolution_tier == t))
        .collect();
    if eligible.len() < requested {
        return Err(ExperimentError::InsufficientPool {
            pool: name.to_string(),
            requested,
            available: eligible.len(),
        });
    }
    let mut r = rng::keyed(RNG_DOMAIN, cfg.seed, 0, name);
    let mut picked: Vec<ManifestEntry> = index::sample(&mut r, eligible.len(), requested)
        .into_iter()
        .map(|i| eligible[i].entry())
        .collect();
    picked.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(picked)
}

/// Draws exactly `real_train` and `synthetic_train` images without
/// replacement, never selecting an id listed in `test_ids`.
pub fn build_manifest(
    real_pool: &[PoolItem],
    synthetic_pool: &[PoolItem],
    cfg: &ExperimentConfig,
    test_ids: &HashSet<&str>,
) -> Result<DatasetManifest> {
    let mut entries = sample(real_pool, cfg.real_train, "real", cfg, test_ids)?;
    let taken: HashSet<String> = entries.iter().map(|e| e.image_id.clone()).collect();
    let mut excluded = test_ids.clone();
    excluded.extend(taken.iter().map(String::as_str));
    entries.extend(sample(synthetic_pool, cfg.synthetic_train, "synthetic", cfg, &excluded)?);
    Ok(DatasetManifest::new(cfg.name.clone(), entries)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{DetectorHandle, OracleParams};

    fn pool(prefix: &str, n: usize, provenance: Provenance) -> Vec<PoolItem> {
        (0..n)
            .map(|i| PoolItem {
                key: format!("{prefix}{i:04}"),
                provenance,
                resolution_tier: ResolutionTier::R1k,
                categories: vec![if i % 3 == 0 { "crossarm_split" } else { "crossarm_healthy" }.into()],
            })
            .collect()
    }

    fn cfg(real: usize, synth: usize, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            name: "x".into(),
            real_train: real,
            synthetic_train: synth,
            resolution_tier: None,
            detector: DetectorHandle::oracle(OracleParams::default()),
            test_manifest: PathBuf::new(),
            seed,
            baseline: None,
        }
    }

    #[test]
    fn exact_counts_and_deterministic() {
        let real = pool("r", 400, Provenance::Real);
        let synth = pool("s", 2000, Provenance::Synthetic);
        let none = HashSet::new();
        let a = build_manifest(&real, &synth, &cfg(393, 1965, 4), &none).unwrap();
        assert_eq!((a.composition.real_count, a.composition.synthetic_count), (393, 1965));
        let b = build_manifest(&real, &synth, &cfg(393, 1965, 4), &none).unwrap();
        assert_eq!(a, b);
        let c = build_manifest(&real, &synth, &cfg(393, 1965, 5), &none).unwrap();
        assert_ne!(a.entries, c.entries);
    }

    #[test]
    fn test_ids_are_never_selected() {
        let real = pool("r", 10, Provenance::Real);
        let test: HashSet<&str> = ["r0001", "r0002"].into_iter().collect();
        let m = build_manifest(&real, &[], &cfg(8, 0, 1), &test).unwrap();
        assert!(m.ids().is_disjoint(&test));
        match build_manifest(&real, &[], &cfg(9, 0, 1), &test) {
            Err(ExperimentError::InsufficientPool { pool, requested, available }) => {
                assert_eq!((pool.as_str(), requested, available), ("real", 9, 8));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn insufficient_pool() {
        let real = pool("r", 5, Provenance::Real);
        assert!(matches!(
            build_manifest(&real, &[], &cfg(10, 0, 0), &HashSet::new()),
            Err(ExperimentError::InsufficientPool { requested: 10, available: 5, .. })
        ));
    }
}
