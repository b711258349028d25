use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::Mutex;
use polescan_core::tracker::{LocalBlobStore, Tracker, Watcher};

/// Shared handles behind every request.
#[derive(Clone)]
pub struct AppState {
    pub(crate) inner: Arc<Inner>,
}

pub struct Inner {
    pub tracker: Tracker,
    pub blobs: LocalBlobStore,
    pub results_dir: PathBuf,
    /// Scan state per prefix for `POST /api/ingest/scan`.
    pub watchers: Mutex<HashMap<String, Watcher>>,
}

impl AppState {
    pub fn new(tracker: Tracker, blobs: LocalBlobStore, results_dir: PathBuf) -> Self {
        Self {
            inner: Arc::new(Inner {
                tracker,
                blobs,
                results_dir,
                watchers: Mutex::new(HashMap::new()),
            }),
        }
    }

    pub fn tracker(&self) -> &Tracker {
        &self.inner.tracker
    }

    pub fn blobs(&self) -> &LocalBlobStore {
        &self.inner.blobs
    }
}
