//! Training-manifest construction, dataset quality reports, and the
//! experiment harness that scores a detector against a held-out test set and
//! compares runs with a baseline.

mod compare;
mod manifest;
mod qc;
mod run;

pub use compare::{compare_to_baseline, Comparison, ComparisonRow, RunSummary};
pub use manifest::{build_manifest, PoolItem, TestSet};
pub use qc::{qc_report, QcBounds, QcFlag, QcReport, ShareCount, SplitBreakdown};
pub use run::{list_results, load_result, run_experiment, ExperimentResult, Workspace, PROGRESS_FILE, REPORT_FILE};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco::CocoError;
use crate::dataset::{ManifestError, ResolutionTier};
use crate::detector::{DetectorError, DetectorHandle};
use crate::metrics::MetricsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub real_train: usize,
    pub synthetic_train: usize,
    /// Restricts both pools to one tier when set.
    #[serde(default)]
    pub resolution_tier: Option<ResolutionTier>,
    pub detector: DetectorHandle,
    /// Directory holding the test set's `annotations.json` and
    /// `manifest.json`.
    pub test_manifest: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Name of the run this one is compared with. A run naming itself is a
    /// baseline and must use no synthetic images.
    #[serde(default)]
    pub baseline: Option<String>,
}

impl ExperimentConfig {
    pub fn is_baseline(&self) -> bool {
        self.baseline.as_deref() == Some(self.name.as_str())
    }

    pub fn validate(&self) -> Result<()> {
        let ok_name = !self.name.is_empty()
            && self.name != "."
            && self.name != ".."
            && self.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
        if !ok_name {
            return Err(ExperimentError::BadConfig(format!(
                "experiment name `{}` must be non-empty and use only [A-Za-z0-9_.-]",
                self.name
            )));
        }
        if self.is_baseline() && self.synthetic_train != 0 {
            return Err(ExperimentError::BadConfig(format!(
                "baseline `{}` must have synthetic_train = 0",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{pool} pool has {available} eligible images; {requested} requested")]
    InsufficientPool {
        pool: String,
        requested: usize,
        available: usize,
    },
    #[error("no annotations for manifest image {0}")]
    MissingAnnotations(String),
    #[error("unknown baseline `{0}`")]
    UnknownBaseline(String),
    #[error("bad experiment config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Coco(#[from] CocoError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}
