use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BlobStore, GeoPoint, IngestMeta, Tracker, TrackerError};

pub const DEFAULT_POLL_INTERVAL: Duration = Duration::from_secs(2);

/// Optional `<image>.json` sidecar next to an image.
#[derive(Debug, Default, Deserialize)]
struct Sidecar {
    #[serde(default)]
    lat: Option<f64>,
    #[serde(default)]
    lon: Option<f64>,
    #[serde(default)]
    provenance: Option<crate::dataset::Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum WatchOutcome {
    Ingested { uri: String, image_id: String },
    Duplicate { uri: String, existing: String },
    Failed { uri: String, error: String },
}

/// Polls a blob-store prefix and ingests files not seen before. A file is
/// new when its `(key, sha256)` pair has not been seen by this watcher.
#[derive(Debug)]
pub struct Watcher {
    prefix: String,
    defaults: IngestMeta,
    seen: HashMap<String, String>,
}

impl Watcher {
    pub fn new(prefix: impl Into<String>, defaults: IngestMeta) -> Self {
        Self {
            prefix: prefix.into(),
            defaults,
            seen: HashMap::new(),
        }
    }

    pub fn poll_once(&mut self, store: &dyn BlobStore, tracker: &Tracker) -> std::io::Result<Vec<WatchOutcome>> {
        let mut out = Vec::new();
        for uri in store.list(&self.prefix)? {
            if uri.ends_with(".json") {
                continue;
            }
            let bytes = match store.read(&uri) {
                Ok(b) => b,
                Err(e) => {
                    out.push(WatchOutcome::Failed {
                        uri,
                        error: e.to_string(),
                    });
                    continue;
                }
            };
            let digest = hex::encode(Sha256::digest(&bytes));
            if self.seen.get(&uri) == Some(&digest) {
                continue;
            }
            let meta = self.meta_for(store, &uri);
            let outcome = match tracker.ingest_bytes(&uri, &bytes, meta) {
                Ok(r) => WatchOutcome::Ingested {
                    uri: uri.clone(),
                    image_id: r.image_id,
                },
                Err(TrackerError::Duplicate { existing }) => WatchOutcome::Duplicate {
                    uri: uri.clone(),
                    existing,
                },
                Err(e) => WatchOutcome::Failed {
                    uri: uri.clone(),
                    error: e.to_string(),
                },
            };
            self.seen.insert(uri, digest);
            out.push(outcome);
        }
        Ok(out)
    }

    fn meta_for(&self, store: &dyn BlobStore, uri: &str) -> IngestMeta {
        let sidecar: Sidecar = store
            .read(&format!("{uri}.json"))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default();
        IngestMeta {
            provenance: sidecar.provenance.unwrap_or(self.defaults.provenance),
            geo: match (sidecar.lat, sidecar.lon) {
                (Some(lat), Some(lon)) => Some(GeoPoint { lat, lon }),
                _ => self.defaults.geo,
            },
            ..self.defaults
        }
    }

    /// Polls until `stop` is set.
    pub fn run(
        &mut self,
        store: &dyn BlobStore,
        tracker: &Tracker,
        interval: Duration,
        stop: &AtomicBool,
        mut on_outcome: impl FnMut(&WatchOutcome),
    ) -> std::io::Result<()> {
        while !stop.load(Ordering::Relaxed) {
            for o in self.poll_once(store, tracker)? {
                on_outcome(&o);
            }
            let mut slept = Duration::ZERO;
            while slept < interval && !stop.load(Ordering::Relaxed) {
                let step = (interval - slept).min(Duration::from_millis(50));
                std::thread::sleep(step);
                slept += step;
            }
        }
        Ok(())
    }
}
