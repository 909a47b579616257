//! Append-only scan store.
//!
//! `events.jsonl` holds one [`Event`] per line and [`StoreState`] is a pure
//! fold over those lines, so a restart rebuilds exactly the state that was
//! last published. Uploaded images are kept as `images/<scan_id>.png`.
//!
//! Writers are serialized by one mutex. Every write validates against a copy
//! of the state, syncs its line to disk, then publishes the copy; readers
//! only ever clone the published `Arc`.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use instqc_core::dataset::{
    append_record, read_records, AnnotationRecord, DatasetError, DefectLabel, InstrumentLabel, Provenance,
};
use instqc_core::pipeline::{Disposition, LabelScore, ScanFailure, ScanResult};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const IMAGES_DIR: &str = "images";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("scan {0} not found")]
    UnknownScan(Uuid),
    #[error("scan {0} already exists")]
    DuplicateScan(Uuid),
    #[error("scan {scan_id} is {status:?}, not awaiting review")]
    NotAwaitingReview { scan_id: Uuid, status: ScanStatus },
    #[error("invalid decision: {0}")]
    InvalidDecision(String),
    #[error("event log line {line} is corrupt: {message}")]
    Corrupt { line: usize, message: String },
    #[error("feedback manifest: {0}")]
    Manifest(#[from] DatasetError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanStatus {
    Final,
    AwaitingReview,
    Reviewed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub scan_id: Uuid,
    pub reviewer_id: String,
    pub decided_instrument: InstrumentLabel,
    pub decided_defect: DefectLabel,
    pub timestamp: DateTime<Utc>,
}

/// The defect stage run again with the reviewer's instrument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectRerun {
    pub instrument: InstrumentLabel,
    pub disposition: Disposition<DefectLabel>,
    pub top: Vec<LabelScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewOutcome {
    pub decision: ReviewDecision,
    pub defect_rerun: Option<DefectRerun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub scan_id: Uuid,
    /// Stored copy of the upload, relative to the store directory.
    pub image_path: String,
    /// Submission order; the review queue is sorted by it.
    pub sequence: u64,
    pub submitted_at: DateTime<Utc>,
    pub result: ScanResult,
    pub status: ScanStatus,
    pub review: Option<ReviewOutcome>,
}

impl ScanRecord {
    /// Human labels once reviewed, otherwise `None`.
    pub fn final_labels(&self) -> Option<(InstrumentLabel, DefectLabel)> {
        self.review
            .as_ref()
            .map(|r| (r.decision.decided_instrument, r.decision.decided_defect))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    ScanSubmitted { record: Box<ScanRecord> },
    ScanFailed { failure: ScanFailure },
    ReviewDecided { outcome: ReviewOutcome },
}

/// Everything the event log implies. Serializes canonically: all maps are
/// ordered.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreState {
    scans: BTreeMap<Uuid, ScanRecord>,
    failures: BTreeMap<Uuid, ScanFailure>,
    /// Awaiting-review scans by sequence number.
    queue: BTreeMap<u64, Uuid>,
    next_sequence: u64,
}

impl StoreState {
    pub fn scan(&self, id: &Uuid) -> Option<&ScanRecord> {
        self.scans.get(id)
    }

    /// All scans, ordered by id.
    pub fn scans(&self) -> impl Iterator<Item = &ScanRecord> {
        self.scans.values()
    }

    pub fn failures(&self) -> impl Iterator<Item = &ScanFailure> {
        self.failures.values()
    }

    /// Awaiting-review scans, oldest submission first.
    pub fn queue(&self) -> impl Iterator<Item = &ScanRecord> {
        self.queue.values().map(|id| &self.scans[id])
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("state is plain data")
    }

    fn apply(&mut self, event: &Event) -> Result<()> {
        match event {
            Event::ScanSubmitted { record } => {
                let id = record.scan_id;
                if self.scans.contains_key(&id) || self.failures.contains_key(&id) {
                    return Err(StoreError::DuplicateScan(id));
                }
                let expected = if record.result.needs_review() {
                    ScanStatus::AwaitingReview
                } else {
                    ScanStatus::Final
                };
                if record.status != expected || record.review.is_some() || record.sequence != self.next_sequence {
                    return Err(StoreError::InvalidDecision(format!("inconsistent submission for {id}")));
                }
                if expected == ScanStatus::AwaitingReview {
                    self.queue.insert(record.sequence, id);
                }
                self.scans.insert(id, ScanRecord::clone(record));
                self.next_sequence += 1;
            }
            Event::ScanFailed { failure } => {
                let id = failure.scan_id;
                if self.scans.contains_key(&id) || self.failures.contains_key(&id) {
                    return Err(StoreError::DuplicateScan(id));
                }
                self.failures.insert(id, failure.clone());
            }
            Event::ReviewDecided { outcome } => {
                let id = outcome.decision.scan_id;
                let record = self.scans.get_mut(&id).ok_or(StoreError::UnknownScan(id))?;
                if record.status != ScanStatus::AwaitingReview {
                    return Err(StoreError::NotAwaitingReview {
                        scan_id: id,
                        status: record.status,
                    });
                }
                record.status = ScanStatus::Reviewed;
                record.review = Some(outcome.clone());
                self.queue.remove(&record.sequence);
            }
        }
        Ok(())
    }
}

pub fn feedback_record_id(scan_id: &Uuid) -> String {
    format!("review-{scan_id}")
}

struct Writer {
    events: File,
    state: Arc<StoreState>,
    feedback_path: PathBuf,
    /// Record ids already present in the feedback manifest.
    feedback_ids: HashSet<String>,
}

pub struct Store {
    dir: PathBuf,
    writer: Mutex<Writer>,
    published: RwLock<Arc<StoreState>>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("dir", &self.dir).finish_non_exhaustive()
    }
}

impl Store {
    /// Opens or creates a store, replaying its log.
    ///
    /// A final line cut short by a crash is dropped and truncated away; any
    /// other unreadable line is an error. Reviewed scans missing from the
    /// feedback manifest are appended to it.
    pub fn open(dir: &Path, feedback_manifest: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir.join(IMAGES_DIR))?;
        let path = dir.join(EVENTS_FILE);
        let mut events = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        let mut bytes = Vec::new();
        events.read_to_end(&mut bytes)?;

        let mut state = StoreState::default();
        let mut offset = 0;
        let mut line_no = 0;
        while offset < bytes.len() {
            line_no += 1;
            let end = bytes[offset..].iter().position(|&b| b == b'\n').map(|i| offset + i);
            let line = &bytes[offset..end.unwrap_or(bytes.len())];
            let next_offset = end.map_or(bytes.len(), |e| e + 1);
            if end.is_some() && line.iter().all(u8::is_ascii_whitespace) {
                offset = next_offset;
                continue;
            }
            match (serde_json::from_slice::<Event>(line), end) {
                (Ok(event), _) => {
                    state.apply(&event).map_err(|e| StoreError::Corrupt {
                        line: line_no,
                        message: e.to_string(),
                    })?;
                    if end.is_none() {
                        // Complete record whose newline never made it.
                        events.write_all(b"\n")?;
                        events.sync_data()?;
                    }
                }
                (Err(_), None) => {
                    tracing::warn!(line = line_no, "dropping torn final event");
                    events.set_len(offset as u64)?;
                    events.sync_data()?;
                }
                (Err(e), Some(_)) => {
                    return Err(StoreError::Corrupt {
                        line: line_no,
                        message: e.to_string(),
                    })
                }
            }
            offset = next_offset;
        }

        let mut feedback_ids = HashSet::new();
        if feedback_manifest.exists() {
            feedback_ids.extend(read_records(feedback_manifest)?.into_iter().map(|r| r.record_id));
        }
        let state = Arc::new(state);
        let mut writer = Writer {
            events,
            state: state.clone(),
            feedback_path: feedback_manifest.to_path_buf(),
            feedback_ids,
        };
        for record in state.scans() {
            if let Some(outcome) = &record.review {
                Self::append_feedback(dir, &mut writer, record, &outcome.decision)?;
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            writer: Mutex::new(writer),
            published: RwLock::new(state),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// The latest published state.
    pub fn snapshot(&self) -> Arc<StoreState> {
        self.published.read().expect("store lock poisoned").clone()
    }

    pub fn image_path(&self, scan_id: &Uuid) -> PathBuf {
        self.dir.join(IMAGES_DIR).join(format!("{scan_id}.png"))
    }

    fn write_image(&self, scan_id: &Uuid, png: &[u8]) -> Result<String> {
        let path = self.image_path(scan_id);
        let tmp = path.with_extension("png.tmp");
        let mut file = File::create(&tmp)?;
        file.write_all(png)?;
        file.sync_data()?;
        std::fs::rename(&tmp, &path)?;
        Ok(format!("{IMAGES_DIR}/{scan_id}.png"))
    }

    /// Validates `event` against a copy of the state, makes it durable, then
    /// publishes the new state.
    fn commit(&self, writer: &mut Writer, event: Event) -> Result<Arc<StoreState>> {
        let mut next = (*writer.state).clone();
        next.apply(&event)?;
        let mut line = serde_json::to_vec(&event)?;
        line.push(b'\n');
        writer.events.write_all(&line)?;
        writer.events.sync_data()?;
        let next = Arc::new(next);
        writer.state = next.clone();
        *self.published.write().expect("store lock poisoned") = next.clone();
        Ok(next)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Writer> {
        self.writer.lock().expect("store lock poisoned")
    }

    /// Stores the upload and its pipeline result.
    pub fn submit(&self, result: ScanResult, png: &[u8]) -> Result<ScanRecord> {
        let mut writer = self.lock();
        let scan_id = result.scan_id;
        if writer.state.scan(&scan_id).is_some() {
            return Err(StoreError::DuplicateScan(scan_id));
        }
        let image_path = self.write_image(&scan_id, png)?;
        let status = if result.needs_review() {
            ScanStatus::AwaitingReview
        } else {
            ScanStatus::Final
        };
        let record = ScanRecord {
            scan_id,
            image_path,
            sequence: writer.state.next_sequence,
            submitted_at: Utc::now(),
            result,
            status,
            review: None,
        };
        self.commit(&mut writer, Event::ScanSubmitted { record: Box::new(record.clone()) })?;
        Ok(record)
    }

    /// Keeps the upload and an audit record of a scan the pipeline could not finish.
    pub fn record_failure(&self, failure: ScanFailure, png: &[u8]) -> Result<()> {
        let mut writer = self.lock();
        self.write_image(&failure.scan_id, png)?;
        self.commit(&mut writer, Event::ScanFailed { failure })?;
        Ok(())
    }

    /// Marks an awaiting scan reviewed and feeds the human labels back into
    /// the manifest exactly once.
    pub fn decide(&self, decision: ReviewDecision, defect_rerun: Option<DefectRerun>) -> Result<ScanRecord> {
        if decision.reviewer_id.trim().is_empty() {
            return Err(StoreError::InvalidDecision("reviewer_id is empty".into()));
        }
        if decision.decided_instrument.is_miscellaneous() && decision.decided_defect.is_defect() {
            return Err(StoreError::InvalidDecision(
                "Miscellaneous cannot carry a defect label".into(),
            ));
        }
        let mut writer = self.lock();
        let id = decision.scan_id;
        let event = Event::ReviewDecided {
            outcome: ReviewOutcome { decision, defect_rerun },
        };
        // Dry run first so a rejected decision never reaches the manifest.
        (*writer.state).clone().apply(&event)?;
        let Event::ReviewDecided { outcome } = &event else { unreachable!() };
        let record = writer.state.scan(&id).expect("validated above").clone();
        // Manifest before log: a crash in between leaves the scan awaiting,
        // and the retry finds the manifest entry already present.
        Self::append_feedback(&self.dir, &mut writer, &record, &outcome.decision)?;
        let state = self.commit(&mut writer, event)?;
        Ok(state.scan(&id).expect("just committed").clone())
    }

    fn append_feedback(dir: &Path, writer: &mut Writer, record: &ScanRecord, decision: &ReviewDecision) -> Result<()> {
        let id = feedback_record_id(&record.scan_id);
        if writer.feedback_ids.contains(&id) {
            return Ok(());
        }
        let image = std::path::absolute(dir.join(&record.image_path))?;
        let entry = AnnotationRecord::labeled(
            id.clone(),
            image.to_string_lossy(),
            decision.decided_instrument,
            decision.decided_defect,
            Provenance::ReviewDecision {
                scan_id: record.scan_id.to_string(),
            },
        );
        append_record(&writer.feedback_path, &entry)?;
        writer.feedback_ids.insert(id);
        Ok(())
    }
}
