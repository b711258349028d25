use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ExperimentError, Result};
use crate::coco::{CategorySpec, Health, InstanceAnnotation};
use crate::dataset::{DatasetManifest, Provenance, Split};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QcBounds {
    pub min_defective_fraction: f64,
    pub max_defective_fraction: f64,
}

impl Default for QcBounds {
    fn default() -> Self {
        Self {
            min_defective_fraction: 0.2,
            max_defective_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShareCount {
    pub count: u64,
    pub fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitBreakdown {
    pub images: u64,
    pub healthy: u64,
    pub defective: u64,
    pub real: u64,
    pub synthetic: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QcFlag {
    Imbalance { defective_fraction: f64, bounds: QcBounds },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub images: u64,
    pub instances: u64,
    /// Instances per category name, with the fraction of all instances.
    pub per_category: BTreeMap<String, ShareCount>,
    pub healthy_images: u64,
    pub defective_images: u64,
    /// `None` for an empty manifest.
    pub defective_fraction: Option<f64>,
    /// healthy / defective; `None` without defective images.
    pub healthy_to_defective: Option<f64>,
    pub real_images: u64,
    pub synthetic_images: u64,
    /// real / synthetic; `None` without synthetic images.
    pub real_to_synthetic: Option<f64>,
    pub per_split: BTreeMap<Split, SplitBreakdown>,
    pub flags: Vec<QcFlag>,
}

fn ratio(a: u64, b: u64) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

/// Composition and balance checks over a manifest. An image is defective
/// when any of its instances is.
pub fn qc_report(
    manifest: &DatasetManifest,
    annotations: &HashMap<String, Vec<InstanceAnnotation>>,
    categories: &[CategorySpec],
    bounds: QcBounds,
) -> Result<QcReport> {
    let by_id: HashMap<u64, &CategorySpec> = categories.iter().map(|c| (c.id, c)).collect();
    let mut per_category: BTreeMap<String, u64> = categories.iter().map(|c| (c.name.clone(), 0)).collect();
    let mut per_split: BTreeMap<Split, SplitBreakdown> = BTreeMap::new();
    let (mut instances, mut healthy, mut defective, mut real, mut synthetic) = (0, 0, 0, 0, 0);

    for e in &manifest.entries {
        let anns = annotations
            .get(&e.image_id)
            .ok_or_else(|| ExperimentError::MissingAnnotations(e.image_id.clone()))?;
        let mut is_defective = false;
        for a in anns {
            let c = by_id
                .get(&a.category_id)
                .ok_or_else(|| ExperimentError::BadConfig(format!("unknown category {} on {}", a.category_id, e.image_id)))?;
            *per_category.entry(c.name.clone()).or_default() += 1;
            is_defective |= c.health == Health::Defective;
            instances += 1;
        }
        let s = per_split.entry(e.split).or_default();
        s.images += 1;
        if is_defective {
            defective += 1;
            s.defective += 1;
        } else {
            healthy += 1;
            s.healthy += 1;
        }
        match e.provenance {
            Provenance::Real => {
                real += 1;
                s.real += 1;
            }
            Provenance::Synthetic => {
                synthetic += 1;
                s.synthetic += 1;
            }
        }
    }

    let images = manifest.entries.len() as u64;
    let defective_fraction = ratio(defective, images);
    let mut flags = Vec::new();
    if let Some(f) = defective_fraction {
        if f < bounds.min_defective_fraction || f > bounds.max_defective_fraction {
            flags.push(QcFlag::Imbalance {
                defective_fraction: f,
                bounds,
            });
        }
    }
    Ok(QcReport {
        images,
        instances,
        per_category: per_category
            .into_iter()
            .map(|(k, count)| {
                let fraction = ratio(count, instances).unwrap_or(0.0);
                (k, ShareCount { count, fraction })
            })
            .collect(),
        healthy_images: healthy,
        defective_images: defective,
        defective_fraction,
        healthy_to_defective: ratio(healthy, defective),
        real_images: real,
        synthetic_images: synthetic,
        real_to_synthetic: ratio(real, synthetic),
        per_split,
        flags,
    })
}

impl QcReport {
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
        let mut s = String::new();
        let _ = writeln!(s, "images: {}  instances: {}", self.images, self.instances);
        let _ = writeln!(
            s,
            "healthy: {}  defective: {}  defective fraction: {}  healthy:defective {}",
            self.healthy_images,
            self.defective_images,
            opt(self.defective_fraction),
            opt(self.healthy_to_defective)
        );
        let _ = writeln!(
            s,
            "real: {}  synthetic: {}  real:synthetic {}",
            self.real_images,
            self.synthetic_images,
            opt(self.real_to_synthetic)
        );
        let _ = writeln!(s, "instances by category:");
        for (name, c) in &self.per_category {
            let _ = writeln!(s, "  {name:<20} {:>7}  {:>6.2}%", c.count, 100.0 * c.fraction);
        }
        for (split, b) in &self.per_split {
            let _ = writeln!(
                s,
                "split {split:?}: {} images ({} healthy, {} defective, {} real, {} synthetic)",
                b.images, b.healthy, b.defective, b.real, b.synthetic
            );
        }
        for f in &self.flags {
            match f {
                QcFlag::Imbalance { defective_fraction, bounds } => {
                    let _ = writeln!(
                        s,
                        "FLAG imbalance: defective fraction {defective_fraction:.3} outside [{}, {}]",
                        bounds.min_defective_fraction, bounds.max_defective_fraction
                    );
                }
            }
        }
        s
    }
}
