//! Dataset bookkeeping shared by the generator, the tracker and experiments.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco::HEALTHY_NAME;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Provenance {
    Real,
    Synthetic,
}

/// Resolution tier by long side: 1024, 2048 or 4096 pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResolutionTier {
    R1k,
    R2k,
    R4k,
    Other,
}

impl ResolutionTier {
    pub fn from_dims(width: u32, height: u32) -> Self {
        match width.max(height) {
            1024 => ResolutionTier::R1k,
            2048 => ResolutionTier::R2k,
            4096 => ResolutionTier::R4k,
            _ => ResolutionTier::Other,
        }
    }
}

impl fmt::Display for ResolutionTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResolutionTier::R1k => "1k",
            ResolutionTier::R2k => "2k",
            ResolutionTier::R4k => "4k",
            ResolutionTier::Other => "other",
        })
    }
}

impl FromStr for ResolutionTier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "1k" | "r1k" => Ok(ResolutionTier::R1k),
            "2k" | "r2k" => Ok(ResolutionTier::R2k),
            "4k" | "r4k" => Ok(ResolutionTier::R4k),
            "other" => Ok(ResolutionTier::Other),
            _ => Err(format!("unknown resolution tier `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub split: Split,
    pub provenance: Provenance,
    pub resolution_tier: ResolutionTier,
    /// Category names of the image's annotations, one per instance.
    pub categories: Vec<String>,
}

impl ManifestEntry {
    pub fn is_defective(&self) -> bool {
        self.categories.iter().any(|c| c != HEALTHY_NAME)
    }
}

/// Counts derived from manifest entries. Images count as defective when at
/// least one of their instances is; `per_category` counts instances.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Composition {
    pub real_count: u64,
    pub synthetic_count: u64,
    pub per_category: BTreeMap<String, u64>,
    pub healthy_count: u64,
    pub defective_count: u64,
    pub resolution_tiers: BTreeMap<ResolutionTier, u64>,
}

impl Composition {
    pub fn of(entries: &[ManifestEntry]) -> Self {
        let mut c = Composition::default();
        for e in entries {
            match e.provenance {
                Provenance::Real => c.real_count += 1,
                Provenance::Synthetic => c.synthetic_count += 1,
            }
            for name in &e.categories {
                *c.per_category.entry(name.clone()).or_default() += 1;
            }
            if e.is_defective() {
                c.defective_count += 1;
            } else {
                c.healthy_count += 1;
            }
            *c.resolution_tiers.entry(e.resolution_tier).or_default() += 1;
        }
        c
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManifestError {
    #[error("image `{0}` listed more than once")]
    DuplicateEntry(String),
    #[error("stored composition does not match entries")]
    CompositionMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub entries: Vec<ManifestEntry>,
    pub composition: Composition,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, entries: Vec<ManifestEntry>) -> Result<Self, ManifestError> {
        let m = Self {
            name: name.into(),
            composition: Composition::of(&entries),
            entries,
        };
        m.verify()?;
        Ok(m)
    }

    /// Checks entry uniqueness and that the stored composition matches.
    pub fn verify(&self) -> Result<(), ManifestError> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.image_id.as_str()) {
                return Err(ManifestError::DuplicateEntry(e.image_id.clone()));
            }
        }
        if Composition::of(&self.entries) != self.composition {
            return Err(ManifestError::CompositionMismatch);
        }
        Ok(())
    }

    pub fn ids(&self) -> HashSet<&str> {
        self.entries.iter().map(|e| e.image_id.as_str()).collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}
