use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::log::{read_jsonl, Attachment, LogWriter};
use super::{
    BlobStore, GeoPoint, ImageRecord, InferenceResult, LifecycleState, PoolImage, Result, TrackerError,
    TransitionEvent, Verdict, VerificationDecision, ATTACHMENTS_FILE, EVENTS_FILE,
};
use crate::coco::{standard_categories, validate_annotations, AnnotationSet, ImageEntry, InstanceAnnotation};
use crate::dataset::{Provenance, ResolutionTier};
use crate::metrics::Detection;
use crate::rng::hash64;

use LifecycleState::*;

pub const SYSTEM_ACTOR: &str = "system";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestMeta {
    pub provenance: Provenance,
    #[serde(default)]
    pub geo: Option<GeoPoint>,
    /// Read from the image header when absent.
    #[serde(default)]
    pub width: Option<u32>,
    #[serde(default)]
    pub height: Option<u32>,
}

impl Default for IngestMeta {
    fn default() -> Self {
        Self {
            provenance: Provenance::Real,
            geo: None,
            width: None,
            height: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingPolicy {
    pub labeling_fraction: f64,
    #[serde(default)]
    pub salt: String,
    /// Forces `BatchPrediction` or `Labeling`.
    #[serde(default)]
    pub override_target: Option<LifecycleState>,
}

/// `true` when `(hash64(image_id || salt) mod 10^6) / 10^6 < p`.
pub fn routes_to_labeling(image_id: &str, salt: &str, p: f64) -> bool {
    let h = hash64(&[image_id.as_bytes(), salt.as_bytes()]);
    ((h % 1_000_000) as f64 / 1e6) < p
}

/// Source of event times and id prefixes, in UTC milliseconds.
pub type Clock = fn() -> u64;

pub fn system_clock() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn parse_id(id: &str) -> Option<(u64, u32)> {
    let (ms, seq) = id.split_once('-')?;
    Some((ms.parse().ok()?, seq.parse().ok()?))
}

#[derive(Debug, Clone)]
struct Entry {
    record: ImageRecord,
    events: Vec<TransitionEvent>,
    inference: Option<InferenceResult>,
    verdicts: Vec<VerificationDecision>,
    labels: Option<Vec<InstanceAnnotation>>,
}

#[derive(Debug, Default)]
struct Index {
    entries: HashMap<String, Entry>,
    ids: BTreeSet<String>,
    live_digests: HashMap<String, String>,
}

impl Index {
    /// The single place where events change in-memory state, shared by
    /// replay and live writes.
    fn apply(&mut self, event: TransitionEvent, attachment: Option<Attachment>) {
        if event.is_creation() {
            let Some(Attachment::Record { record }) = attachment else {
                unreachable!("creation is checked to carry its record")
            };
            self.live_digests.insert(record.sha256.clone(), record.image_id.clone());
            self.ids.insert(record.image_id.clone());
            self.entries.insert(
                record.image_id.clone(),
                Entry {
                    record,
                    events: vec![event],
                    inference: None,
                    verdicts: Vec::new(),
                    labels: None,
                },
            );
            return;
        }
        let entry = self.entries.get_mut(&event.image_id).expect("checked before apply");
        entry.record.state = event.to;
        entry.record.state_version = event.version_after;
        if event.to == Archived && self.live_digests.get(&entry.record.sha256) == Some(&entry.record.image_id) {
            self.live_digests.remove(&entry.record.sha256);
        }
        match attachment {
            Some(Attachment::Inference { result, .. }) => entry.inference = Some(result),
            Some(Attachment::Verdict { decision, .. }) => entry.verdicts.push(decision),
            Some(Attachment::Labels { annotations, .. }) => entry.labels = Some(annotations),
            _ => {}
        }
        entry.events.push(event);
    }

    fn entry(&self, image_id: &str) -> Result<&Entry> {
        self.entries
            .get(image_id)
            .ok_or_else(|| TrackerError::UnknownImage(image_id.to_string()))
    }
}

fn required_attachment(from: LifecycleState, to: LifecycleState) -> Option<&'static str> {
    match (from, to) {
        (BatchPrediction, Verification) => Some("inference"),
        (Verification, Verified | Staging) => Some("verdict"),
        (Labeling, TrainingPool) => Some("labels"),
        _ => None,
    }
}

fn kind_of(a: &Attachment) -> &'static str {
    match a {
        Attachment::Record { .. } => "record",
        Attachment::Inference { .. } => "inference",
        Attachment::Verdict { .. } => "verdict",
        Attachment::Labels { .. } => "labels",
    }
}

struct Writer {
    log: LogWriter,
    last_id: (u64, u32),
    clock: Clock,
}

impl Writer {
    fn next_id(&mut self) -> String {
        let now = (self.clock)().max(self.last_id.0);
        self.last_id = if now == self.last_id.0 {
            (now, self.last_id.1 + 1)
        } else {
            (now, 0)
        };
        format!("{:013}-{:06}", self.last_id.0, self.last_id.1)
    }
}

/// The image tracking table.
///
/// Every mutation holds the writer lock from the compare-and-set check until
/// the index reflects the appended event, so checks and writes are atomic.
/// Readers only take the index lock and never see a state without its event.
pub struct Tracker {
    dir: PathBuf,
    writer: Mutex<Writer>,
    index: RwLock<Index>,
}

impl std::fmt::Debug for Tracker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tracker").field("dir", &self.dir).finish_non_exhaustive()
    }
}

impl Tracker {
    /// Opens or creates the log in `dir` and replays it.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(dir, false)
    }

    /// `durable` syncs every append to disk.
    pub fn open_with(dir: impl AsRef<Path>, durable: bool) -> Result<Self> {
        Self::open_with_clock(dir, durable, system_clock)
    }

    pub fn open_with_clock(dir: impl AsRef<Path>, durable: bool, clock: Clock) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(super::log::io_err(&dir))?;
        let (index, last_id) = replay(&dir)?;
        Ok(Self {
            writer: Mutex::new(Writer {
                log: LogWriter::open(&dir, durable)?,
                last_id,
                clock,
            }),
            index: RwLock::new(index),
            dir,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn ingest_image(&self, store: &dyn BlobStore, uri: &str, meta: IngestMeta) -> Result<ImageRecord> {
        let bytes = store.read(uri).map_err(|e| TrackerError::UnreadableBlob {
            uri: uri.to_string(),
            reason: e.to_string(),
        })?;
        self.ingest_bytes(uri, &bytes, meta)
    }

    pub fn ingest_bytes(&self, uri: &str, bytes: &[u8], meta: IngestMeta) -> Result<ImageRecord> {
        let sha256 = hex::encode(Sha256::digest(bytes));
        let (width, height) = match (meta.width, meta.height) {
            (Some(w), Some(h)) => (w, h),
            _ => image::ImageReader::new(Cursor::new(bytes))
                .with_guessed_format()
                .map_err(|e| e.to_string())
                .and_then(|r| r.into_dimensions().map_err(|e| e.to_string()))
                .map_err(|reason| TrackerError::UnreadableBlob {
                    uri: uri.to_string(),
                    reason,
                })?,
        };

        let mut w = self.writer.lock();
        let ordinal = {
            let index = self.index.read();
            if let Some(existing) = index.live_digests.get(&sha256) {
                return Err(TrackerError::Duplicate {
                    existing: existing.clone(),
                });
            }
            index.entries.len() as u64 + 1
        };
        let image_id = w.next_id();
        let record = ImageRecord {
            image_id: image_id.clone(),
            ordinal,
            uri: uri.to_string(),
            sha256,
            width,
            height,
            provenance: meta.provenance,
            resolution_tier: ResolutionTier::from_dims(width, height),
            geo: meta.geo,
            state: Incoming,
            state_version: 0,
        };
        let event = TransitionEvent {
            image_id,
            from: Incoming,
            to: Incoming,
            at: (w.clock)(),
            actor: SYSTEM_ACTOR.into(),
            reason: "ingest".into(),
            version_after: 0,
        };
        let attachment = Attachment::Record { record: record.clone() };
        w.log.append(Some(&attachment), &event)?;
        self.index.write().apply(event, Some(attachment));
        Ok(record)
    }

    /// Check order: unknown id, caller-specific check, version, graph edge.
    #[allow(clippy::too_many_arguments)]
    fn transition(
        &self,
        image_id: &str,
        to: LifecycleState,
        expected_version: Option<u64>,
        actor: &str,
        reason: String,
        precheck: impl FnOnce(&Entry) -> Result<()>,
        attach: impl FnOnce(u64, u64) -> Option<Attachment>,
    ) -> Result<TransitionEvent> {
        let mut w = self.writer.lock();
        let (from, version) = {
            let index = self.index.read();
            let entry = index.entry(image_id)?;
            precheck(entry)?;
            (entry.record.state, entry.record.state_version)
        };
        if let Some(expected) = expected_version {
            if expected != version {
                return Err(TrackerError::VersionConflict {
                    image_id: image_id.to_string(),
                    expected,
                    actual: version,
                });
            }
        }
        if !from.can_transition(to) {
            return Err(TrackerError::IllegalState {
                image_id: image_id.to_string(),
                state: from,
                attempted: to,
            });
        }
        let at = (w.clock)();
        let event = TransitionEvent {
            image_id: image_id.to_string(),
            from,
            to,
            at,
            actor: actor.to_string(),
            reason,
            version_after: version + 1,
        };
        let attachment = attach(version + 1, at);
        w.log.append(attachment.as_ref(), &event)?;
        self.index.write().apply(event.clone(), attachment);
        Ok(event)
    }

    pub fn route_image(
        &self,
        image_id: &str,
        policy: &RoutingPolicy,
        expected_version: Option<u64>,
    ) -> Result<TransitionEvent> {
        if !(0.0..=1.0).contains(&policy.labeling_fraction) {
            return Err(TrackerError::BadPolicy(format!(
                "labeling_fraction {} outside [0, 1]",
                policy.labeling_fraction
            )));
        }
        let target = match policy.override_target {
            Some(t @ (BatchPrediction | Labeling)) => t,
            Some(other) => return Err(TrackerError::BadPolicy(format!("cannot route to {other}"))),
            None if routes_to_labeling(image_id, &policy.salt, policy.labeling_fraction) => Labeling,
            None => BatchPrediction,
        };
        let reason = match (policy.override_target.is_some(), target) {
            (true, _) => format!("route:override:{target}"),
            (false, Labeling) => "route:labeling".to_string(),
            _ => "route:batch_prediction".to_string(),
        };
        self.transition(
            image_id,
            target,
            expected_version,
            SYSTEM_ACTOR,
            reason,
            |e| {
                if e.record.state != Incoming {
                    Err(TrackerError::IllegalState {
                        image_id: image_id.to_string(),
                        state: e.record.state,
                        attempted: target,
                    })
                } else {
                    Ok(())
                }
            },
            |_, _| None,
        )
    }

    pub fn record_inference(
        &self,
        image_id: &str,
        detections: Vec<Detection>,
        detector: &str,
        expected_version: Option<u64>,
    ) -> Result<TransitionEvent> {
        self.transition(
            image_id,
            Verification,
            expected_version,
            SYSTEM_ACTOR,
            format!("inference:{detector}"),
            |_| Ok(()),
            |version, at| {
                Some(Attachment::Inference {
                    image_id: image_id.to_string(),
                    version,
                    result: InferenceResult {
                        detector: detector.to_string(),
                        detections,
                        at,
                    },
                })
            },
        )
    }

    /// Correct moves to `Verified`, Incorrect to `Staging`. A verdict on an
    /// image whose last transition was a verdict is `DuplicateDecision`.
    pub fn apply_verdict(&self, decision: VerificationDecision, expected_version: Option<u64>) -> Result<TransitionEvent> {
        let to = match decision.verdict {
            Verdict::Correct => Verified,
            Verdict::Incorrect => Staging,
        };
        let image_id = decision.image_id.clone();
        let reason = match decision.verdict {
            Verdict::Correct => "verdict:correct",
            Verdict::Incorrect => "verdict:incorrect",
        };
        let reviewer = decision.reviewer.clone();
        self.transition(
            &image_id,
            to,
            expected_version,
            &reviewer,
            reason.into(),
            |e| {
                let last = e.events.last().expect("entries start with a creation event");
                if e.record.state != Verification && last.from == Verification {
                    Err(TrackerError::DuplicateDecision {
                        image_id: e.record.image_id.clone(),
                    })
                } else {
                    Ok(())
                }
            },
            |version, at| {
                Some(Attachment::Verdict {
                    image_id: image_id.clone(),
                    version,
                    decision: VerificationDecision {
                        at: if decision.at == 0 { at } else { decision.at },
                        ..decision
                    },
                })
            },
        )
    }

    /// Moves every listed image from `Staging` to `Labeling`, or none of
    /// them: all ids are checked under the writer lock before anything is
    /// appended.
    pub fn promote_staging(&self, image_ids: &[String], actor: &str) -> Result<Vec<TransitionEvent>> {
        if image_ids.is_empty() {
            return Err(TrackerError::EmptyBatch);
        }
        let mut w = self.writer.lock();
        let mut planned = Vec::with_capacity(image_ids.len());
        {
            let index = self.index.read();
            let mut seen = BTreeSet::new();
            for id in image_ids {
                let e = index.entry(id)?;
                if e.record.state != Staging || !seen.insert(id.as_str()) {
                    return Err(TrackerError::IllegalState {
                        image_id: id.clone(),
                        state: e.record.state,
                        attempted: Labeling,
                    });
                }
                planned.push(TransitionEvent {
                    image_id: id.clone(),
                    from: Staging,
                    to: Labeling,
                    at: (w.clock)(),
                    actor: actor.to_string(),
                    reason: "promote".into(),
                    version_after: e.record.state_version + 1,
                });
            }
        }
        for event in &planned {
            w.log.append(None, event)?;
            self.index.write().apply(event.clone(), None);
        }
        Ok(planned)
    }

    /// Annotation `image_id`s are rewritten to the record's ordinal and the
    /// set is validated against the standard categories.
    pub fn complete_labeling(
        &self,
        image_id: &str,
        annotations: Vec<InstanceAnnotation>,
        actor: &str,
        expected_version: Option<u64>,
    ) -> Result<TransitionEvent> {
        let record = self.get(image_id)?;
        if record.state != Labeling {
            return Err(TrackerError::IllegalState {
                image_id: image_id.to_string(),
                state: record.state,
                attempted: TrainingPool,
            });
        }
        let annotations: Vec<InstanceAnnotation> = annotations
            .into_iter()
            .map(|a| InstanceAnnotation {
                image_id: record.ordinal,
                ..a
            })
            .collect();
        let set = AnnotationSet {
            images: vec![ImageEntry {
                id: record.ordinal,
                file_name: record.uri.clone(),
                width: record.width,
                height: record.height,
            }],
            annotations,
            categories: standard_categories(),
        };
        let report = validate_annotations(&set);
        if !report.is_clean() {
            return Err(TrackerError::InvalidAnnotations(report));
        }
        let annotations = set.annotations;
        self.transition(
            image_id,
            TrainingPool,
            expected_version,
            actor,
            "labeled".into(),
            |_| Ok(()),
            |version, _| {
                Some(Attachment::Labels {
                    image_id: image_id.to_string(),
                    version,
                    annotations,
                })
            },
        )
    }

    pub fn archive(&self, image_id: &str, actor: &str, reason: &str, expected_version: Option<u64>) -> Result<TransitionEvent> {
        self.transition(
            image_id,
            Archived,
            expected_version,
            actor,
            format!("archive:{reason}"),
            |_| Ok(()),
            |_, _| None,
        )
    }

    pub fn get(&self, image_id: &str) -> Result<ImageRecord> {
        Ok(self.index.read().entry(image_id)?.record.clone())
    }

    pub fn image_history(&self, image_id: &str) -> Result<Vec<TransitionEvent>> {
        Ok(self.index.read().entry(image_id)?.events.clone())
    }

    pub fn inference(&self, image_id: &str) -> Result<Option<InferenceResult>> {
        Ok(self.index.read().entry(image_id)?.inference.clone())
    }

    pub fn verdicts(&self, image_id: &str) -> Result<Vec<VerificationDecision>> {
        Ok(self.index.read().entry(image_id)?.verdicts.clone())
    }

    pub fn labels(&self, image_id: &str) -> Result<Option<Vec<InstanceAnnotation>>> {
        Ok(self.index.read().entry(image_id)?.labels.clone())
    }

    /// Records sorted by image id, optionally filtered by state.
    pub fn list(&self, state: Option<LifecycleState>) -> Vec<ImageRecord> {
        let index = self.index.read();
        index
            .ids
            .iter()
            .map(|id| &index.entries[id].record)
            .filter(|r| state.is_none_or(|s| r.state == s))
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.index.read().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Count per state; every state is present.
    pub fn census(&self) -> BTreeMap<LifecycleState, usize> {
        let mut out: BTreeMap<_, _> = LifecycleState::ALL.iter().map(|&s| (s, 0)).collect();
        for e in self.index.read().entries.values() {
            *out.get_mut(&e.record.state).expect("all states present") += 1;
        }
        out
    }

    pub fn all_verdicts(&self) -> Vec<VerificationDecision> {
        let index = self.index.read();
        index
            .ids
            .iter()
            .flat_map(|id| index.entries[id].verdicts.iter().cloned())
            .collect()
    }

    /// Labeled images in `TrainingPool`, sorted by image id.
    pub fn training_pool(&self) -> Vec<PoolImage> {
        let index = self.index.read();
        index
            .ids
            .iter()
            .map(|id| &index.entries[id])
            .filter(|e| e.record.state == TrainingPool)
            .map(|e| PoolImage {
                record: e.record.clone(),
                annotations: e.labels.clone().unwrap_or_default(),
            })
            .collect()
    }

    /// Every event in the index, grouped per image in id order.
    pub fn all_events(&self) -> Vec<TransitionEvent> {
        let index = self.index.read();
        index
            .ids
            .iter()
            .flat_map(|id| index.entries[id].events.iter().cloned())
            .collect()
    }
}

fn replay(dir: &Path) -> Result<(Index, (u64, u32))> {
    let att_path = dir.join(ATTACHMENTS_FILE);
    let ev_path = dir.join(EVENTS_FILE);
    let mut attachments: HashMap<(String, u64, &'static str), Attachment> = HashMap::new();
    let mut last_id = (0, 0);
    for (_, a) in read_jsonl::<Attachment>(&att_path)? {
        if let Attachment::Record { record } = &a {
            if let Some(parsed) = parse_id(&record.image_id) {
                last_id = last_id.max(parsed);
            }
        }
        let (id, version) = a.key();
        // a later write for the same slot supersedes an orphan from a crash
        attachments.insert((id.to_string(), version, kind_of(&a)), a);
    }

    let corrupt = |line: usize, reason: String| TrackerError::CorruptLog {
        file: ev_path.display().to_string(),
        line,
        reason,
    };
    let mut index = Index::default();
    for (line, event) in read_jsonl::<TransitionEvent>(&ev_path)? {
        let key = |kind| (event.image_id.clone(), event.version_after, kind);
        if event.is_creation() {
            if index.entries.contains_key(&event.image_id) {
                return Err(corrupt(line, format!("second creation event for {}", event.image_id)));
            }
            let record = attachments
                .remove(&key("record"))
                .ok_or_else(|| corrupt(line, format!("no ingest record for {}", event.image_id)))?;
            if let Some(parsed) = parse_id(&event.image_id) {
                last_id = last_id.max(parsed);
            }
            index.apply(event, Some(record));
            continue;
        }
        let Some(entry) = index.entries.get(&event.image_id) else {
            return Err(corrupt(line, format!("event for unknown image {}", event.image_id)));
        };
        let (state, version) = (entry.record.state, entry.record.state_version);
        if event.from != state || event.version_after != version + 1 {
            return Err(corrupt(
                line,
                format!(
                    "chain break for {}: at ({state}, {version}), event is ({} -> {}, {})",
                    event.image_id, event.from, event.to, event.version_after
                ),
            ));
        }
        if !event.from.can_transition(event.to) {
            return Err(corrupt(line, format!("illegal edge {} -> {}", event.from, event.to)));
        }
        let attachment = match required_attachment(event.from, event.to) {
            Some(kind) => Some(
                attachments
                    .remove(&key(kind))
                    .ok_or_else(|| corrupt(line, format!("missing {kind} payload for {}", event.image_id)))?,
            ),
            None => None,
        };
        index.apply(event, attachment);
    }
    Ok((index, last_id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coco::BBox;

    fn png(w: u32, h: u32, tag: u8) -> Vec<u8> {
        let img = image::RgbImage::from_pixel(w, h, image::Rgb([tag, 0, 0]));
        let mut out = Vec::new();
        img.write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png).unwrap();
        out
    }

    fn verdict(id: &str, v: Verdict) -> VerificationDecision {
        VerificationDecision {
            image_id: id.into(),
            verdict: v,
            reviewer: "sme-1".into(),
            notes: String::new(),
            at: 0,
        }
    }

    fn to_labeling() -> RoutingPolicy {
        RoutingPolicy {
            labeling_fraction: 1.0,
            salt: String::new(),
            override_target: None,
        }
    }

    fn to_prediction() -> RoutingPolicy {
        RoutingPolicy {
            labeling_fraction: 0.0,
            ..to_labeling()
        }
    }

    #[test]
    fn ingest_creates_record_and_event() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tracker::open(dir.path()).unwrap();
        let r = t.ingest_bytes("a.png", &png(30, 20, 1), IngestMeta::default()).unwrap();
        assert_eq!((r.width, r.height, r.state, r.state_version), (30, 20, Incoming, 0));
        assert_eq!(r.image_id.len(), 20);
        let h = t.image_history(&r.image_id).unwrap();
        assert_eq!(h.len(), 1);
        assert!(h[0].is_creation());
        assert_eq!(h[0].reason, "ingest");
    }

    #[test]
    fn duplicate_bytes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tracker::open(dir.path()).unwrap();
        let a = t.ingest_bytes("a.png", &png(4, 4, 9), IngestMeta::default()).unwrap();
        match t.ingest_bytes("b.png", &png(4, 4, 9), IngestMeta::default()) {
            Err(TrackerError::Duplicate { existing }) => assert_eq!(existing, a.image_id),
            other => panic!("{other:?}"),
        }
        // archiving frees the digest
        t.archive(&a.image_id, "ops", "test", None).unwrap();
        t.ingest_bytes("b.png", &png(4, 4, 9), IngestMeta::default()).unwrap();
    }

    #[test]
    fn unreadable_blob() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tracker::open(dir.path()).unwrap();
        assert!(matches!(
            t.ingest_bytes("x", b"not an image", IngestMeta::default()),
            Err(TrackerError::UnreadableBlob { .. })
        ));
        let store = super::super::LocalBlobStore::new(dir.path());
        assert!(matches!(
            t.ingest_image(&store, "missing.png", IngestMeta::default()),
            Err(TrackerError::UnreadableBlob { .. })
        ));
    }

    #[test]
    fn routing_extremes_and_override() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tracker::open(dir.path()).unwrap();
        let ids: Vec<_> = (0..3)
            .map(|i| t.ingest_bytes("x", &png(4, 4, i), IngestMeta::default()).unwrap().image_id)
            .collect();
        assert_eq!(t.route_image(&ids[0], &to_prediction(), None).unwrap().to, BatchPrediction);
        assert_eq!(t.route_image(&ids[1], &to_labeling(), Some(0)).unwrap().to, Labeling);
        let forced = RoutingPolicy {
            override_target: Some(BatchPrediction),
            ..to_labeling()
        };
        assert_eq!(t.route_image(&ids[2], &forced, None).unwrap().to, BatchPrediction);
        assert!(matches!(
            t.route_image(&ids[0], &to_labeling(), None),
            Err(TrackerError::IllegalState { state: BatchPrediction, .. })
        ));
    }

    #[test]
    fn routing_fraction_census() {
        let n = 10_000;
        let hits = (0..n)
            .filter(|i| routes_to_labeling(&format!("{:013}-{:06}", 1_700_000_000_000u64 + i, 0), "s", 0.3))
            .count();
        let frac = hits as f64 / n as f64;
        assert!((frac - 0.3).abs() <= 0.015, "{frac}");
    }

    #[test]
    fn incorrect_path_history() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tracker::open(dir.path()).unwrap();
        let r = t.ingest_bytes("x", &png(64, 64, 1), IngestMeta::default()).unwrap();
        let id = r.image_id.as_str();
        t.route_image(id, &to_prediction(), Some(0)).unwrap();
        let det = Detection {
            image_id: r.ordinal,
            category_id: 1,
            bbox: BBox::new(1.0, 1.0, 5.0, 5.0),
            segmentation: None,
            confidence: 0.95,
        };
        t.record_inference(id, vec![det.clone()], "oracle", Some(1)).unwrap();
        assert_eq!(t.inference(id).unwrap().unwrap().detections, vec![det]);
        t.apply_verdict(verdict(id, Verdict::Incorrect), Some(2)).unwrap();
        assert_eq!(t.get(id).unwrap().state, Staging);
        assert!(matches!(
            t.apply_verdict(verdict(id, Verdict::Correct), None),
            Err(TrackerError::DuplicateDecision { .. })
        ));
        t.promote_staging(&[id.to_string()], "ops").unwrap();
        // after promotion a verdict is plainly illegal
        assert!(matches!(
            t.apply_verdict(verdict(id, Verdict::Correct), None),
            Err(TrackerError::IllegalState { .. })
        ));
        let bad = InstanceAnnotation::from_rings(1, 0, 2, vec![vec![1.0, 1.0, 70.0, 1.0, 70.0, 9.0]], 64, 64);
        assert!(matches!(
            t.complete_labeling(id, vec![bad], "labeler", None),
            Err(TrackerError::InvalidAnnotations(_))
        ));
        assert_eq!(t.get(id).unwrap().state, Labeling);
        let good = InstanceAnnotation::from_rings(1, 0, 2, vec![vec![1.0, 1.0, 40.0, 1.0, 40.0, 9.0, 1.0, 9.0]], 64, 64);
        t.complete_labeling(id, vec![good], "labeler", Some(4)).unwrap();

        let h = t.image_history(id).unwrap();
        let path: Vec<_> = h.iter().map(|e| e.to).collect();
        assert_eq!(path, vec![Incoming, BatchPrediction, Verification, Staging, Labeling, TrainingPool]);
        assert_eq!(h.len() - 1, 5);
        assert_eq!(super::super::fold(&h), Some((TrainingPool, 5)));
        let pool = t.training_pool();
        assert_eq!(pool.len(), 1);
        assert_eq!(pool[0].annotations[0].image_id, r.ordinal);
    }

    #[test]
    fn version_conflict_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tracker::open(dir.path()).unwrap();
        let id = t.ingest_bytes("x", &png(4, 4, 1), IngestMeta::default()).unwrap().image_id;
        t.route_image(&id, &to_prediction(), None).unwrap();
        t.record_inference(&id, vec![], "o", Some(1)).unwrap();
        assert!(matches!(
            t.record_inference(&id, vec![], "o", Some(1)),
            Err(TrackerError::VersionConflict { expected: 1, actual: 2, .. })
        ));
        assert_eq!(t.image_history(&id).unwrap().len(), 3);
    }

    #[test]
    fn promote_is_all_or_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tracker::open(dir.path()).unwrap();
        let mut ids = Vec::new();
        for (i, v) in [Verdict::Incorrect, Verdict::Incorrect, Verdict::Correct].into_iter().enumerate() {
            let id = t.ingest_bytes("x", &png(4, 4, i as u8), IngestMeta::default()).unwrap().image_id;
            t.route_image(&id, &to_prediction(), None).unwrap();
            t.record_inference(&id, vec![], "o", None).unwrap();
            t.apply_verdict(verdict(&id, v), None).unwrap();
            ids.push(id);
        }
        let before = t.census();
        match t.promote_staging(&ids, "ops") {
            Err(TrackerError::IllegalState { image_id, state, .. }) => {
                assert_eq!(image_id, ids[2]);
                assert_eq!(state, Verified);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(t.census(), before);
        assert!(matches!(t.promote_staging(&[], "ops"), Err(TrackerError::EmptyBatch)));
        assert_eq!(t.promote_staging(&ids[..2], "ops").unwrap().len(), 2);
        assert_eq!(t.census()[&Labeling], 2);
    }

    #[test]
    fn reopen_replays_state() {
        let dir = tempfile::tempdir().unwrap();
        let (id, census) = {
            let t = Tracker::open(dir.path()).unwrap();
            let id = t.ingest_bytes("x", &png(8, 8, 1), IngestMeta::default()).unwrap().image_id;
            t.ingest_bytes("y", &png(8, 8, 2), IngestMeta::default()).unwrap();
            t.route_image(&id, &to_prediction(), None).unwrap();
            t.record_inference(&id, vec![], "o", None).unwrap();
            t.apply_verdict(verdict(&id, Verdict::Correct), None).unwrap();
            (id, t.census())
        };
        let t = Tracker::open(dir.path()).unwrap();
        assert_eq!(t.census(), census);
        assert_eq!(t.get(&id).unwrap().state, Verified);
        assert_eq!(t.verdicts(&id).unwrap().len(), 1);
        let next = t.ingest_bytes("z", &png(8, 8, 3), IngestMeta::default()).unwrap();
        assert!(next.image_id > id);
        assert_eq!(next.ordinal, 3);
    }

    #[test]
    fn corrupt_middle_line_is_named() {
        let dir = tempfile::tempdir().unwrap();
        {
            let t = Tracker::open(dir.path()).unwrap();
            for i in 0..3 {
                t.ingest_bytes("x", &png(4, 4, i), IngestMeta::default()).unwrap();
            }
        }
        let path = dir.path().join(EVENTS_FILE);
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[1] = "{garbage";
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        match Tracker::open(dir.path()) {
            Err(TrackerError::CorruptLog { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        {
            let t = Tracker::open(dir.path()).unwrap();
            for i in 0..2 {
                t.ingest_bytes("x", &png(4, 4, i), IngestMeta::default()).unwrap();
            }
        }
        let path = dir.path().join(EVENTS_FILE);
        let len = std::fs::metadata(&path).unwrap().len();
        let f = std::fs::OpenOptions::new().write(true).open(&path).unwrap();
        f.set_len(len - 7).unwrap();
        let t = Tracker::open(dir.path()).unwrap();
        assert_eq!(t.len(), 1);
        // the orphaned record must not block re-ingesting the same bytes
        t.ingest_bytes("x", &png(4, 4, 1), IngestMeta::default()).unwrap();
        drop(t);
        assert_eq!(Tracker::open(dir.path()).unwrap().len(), 2);
    }
}
