use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{ImageRecord, InferenceResult, Result, TrackerError, TransitionEvent, VerificationDecision};
use crate::coco::InstanceAnnotation;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const ATTACHMENTS_FILE: &str = "attachments.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub(crate) enum Attachment {
    Record {
        record: ImageRecord,
    },
    Inference {
        image_id: String,
        version: u64,
        result: InferenceResult,
    },
    Verdict {
        image_id: String,
        version: u64,
        decision: VerificationDecision,
    },
    Labels {
        image_id: String,
        version: u64,
        annotations: Vec<InstanceAnnotation>,
    },
}

impl Attachment {
    pub(crate) fn key(&self) -> (&str, u64) {
        match self {
            Attachment::Record { record } => (&record.image_id, 0),
            Attachment::Inference { image_id, version, .. }
            | Attachment::Verdict { image_id, version, .. }
            | Attachment::Labels { image_id, version, .. } => (image_id, *version),
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrackerError + '_ {
    move |source| TrackerError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads a JSONL file with 1-based line numbers, truncating a torn final
/// line (one without a trailing newline). Any other unparsable line is
/// `CorruptLog`.
pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete < bytes.len() {
        tracing::warn!(file = %path.display(), dropped = bytes.len() - complete, "dropping torn final line");
        let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        f.set_len(complete as u64).map_err(io_err(path))?;
        f.sync_all().map_err(io_err(path))?;
    }
    let mut out = Vec::new();
    for (i, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let item = serde_json::from_slice(line).map_err(|e| TrackerError::CorruptLog {
            file: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push((i + 1, item));
    }
    Ok(out)
}

pub(crate) struct LogWriter {
    events: (PathBuf, File),
    attachments: (PathBuf, File),
    durable: bool,
}

fn open_append(path: PathBuf) -> Result<(PathBuf, File)> {
    let f = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
    Ok((path, f))
}

fn append_line(target: &mut (PathBuf, File), value: &impl Serialize, durable: bool) -> Result<()> {
    let mut line = serde_json::to_vec(value).expect("log records serialize");
    line.push(b'\n');
    let (path, file) = target;
    file.write_all(&line).map_err(io_err(path))?;
    if durable {
        file.sync_data().map_err(io_err(path))?;
    }
    Ok(())
}

impl LogWriter {
    pub(crate) fn open(dir: &Path, durable: bool) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self {
            events: open_append(dir.join(EVENTS_FILE))?,
            attachments: open_append(dir.join(ATTACHMENTS_FILE))?,
            durable,
        })
    }

    /// Writes the payload first so an event never lacks its attachment.
    pub(crate) fn append(&mut self, attachment: Option<&Attachment>, event: &TransitionEvent) -> Result<()> {
        if let Some(a) = attachment {
            append_line(&mut self.attachments, a, self.durable)?;
        }
        append_line(&mut self.events, event, self.durable)
    }
}
