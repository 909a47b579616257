//! Labeled-sample schema, vote resolution, standardization, stratified
//! splitting and contingency extraction.

mod labels;
mod manifest_io;
pub mod synthetic;

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{resize_bilinear, RasterImage};
use crate::seed;

pub use labels::{DefectLabel, InstrumentLabel, UnknownLabel};
pub use manifest_io::{append_record, read_manifest, read_records, splits_path, write_manifest};
pub use synthetic::{generate_synthetic_corpus, CorpusSpec, SyntheticCorpus};

/// Side length images are standardized to before storage.
pub const STANDARD_SIZE: u32 = 1600;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("at least one vote is required")]
    NoVotes,
    #[error("annotator id must not be empty")]
    EmptyAnnotator,
    #[error("duplicate record id {0:?}")]
    DuplicateRecord(String),
    #[error("record {record:?} references missing parent {parent:?}")]
    MissingParent { record: String, parent: String },
    #[error("record {0:?} is not resolved")]
    Unresolved(String),
    #[error("record {0:?} has inconsistent status and labels")]
    InconsistentRecord(String),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("manifest contains no defective records")]
    NoDefects,
    #[error("contingency table is malformed: {0}")]
    MalformedTable(String),
    #[error("manifest line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationVote {
    pub annotator_id: String,
    pub instrument: InstrumentLabel,
    pub defect: DefectLabel,
}

impl AnnotationVote {
    pub fn new(
        annotator_id: impl Into<String>,
        instrument: InstrumentLabel,
        defect: DefectLabel,
    ) -> Result<Self> {
        let annotator_id = annotator_id.into();
        if annotator_id.trim().is_empty() {
            return Err(DatasetError::EmptyAnnotator);
        }
        Ok(Self {
            annotator_id,
            instrument,
            defect,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationStatus {
    Resolved,
    NeedsAdjudication,
}

/// Where a record came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Augmented { parent_id: String, transform: String },
    Synthetic,
    ReviewDecision { scan_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Outcome of majority voting over a record's annotator votes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolution {
    pub instrument: Option<InstrumentLabel>,
    pub defect: Option<DefectLabel>,
    pub status: AnnotationStatus,
}

/// Strict-majority vote, independently for instrument and defect.
///
/// A field without a strict majority stays `None` and the record needs a
/// neutral reviewer. A `Miscellaneous` majority paired with an actual defect
/// majority is contradictory and is also sent to adjudication.
pub fn resolve_label(votes: &[AnnotationVote]) -> Result<Resolution> {
    if votes.is_empty() {
        return Err(DatasetError::NoVotes);
    }
    let instrument = strict_majority(votes.iter().map(|v| v.instrument), votes.len());
    let mut defect = strict_majority(votes.iter().map(|v| v.defect), votes.len());
    if instrument == Some(InstrumentLabel::Miscellaneous) && defect.is_some_and(DefectLabel::is_defect) {
        defect = None;
    }
    let status = if instrument.is_some() && defect.is_some() {
        AnnotationStatus::Resolved
    } else {
        AnnotationStatus::NeedsAdjudication
    };
    Ok(Resolution {
        instrument,
        defect,
        status,
    })
}

fn strict_majority<T: Copy + Eq + std::hash::Hash>(items: impl Iterator<Item = T>, n: usize) -> Option<T> {
    let mut counts: HashMap<T, usize> = HashMap::new();
    for item in items {
        *counts.entry(item).or_default() += 1;
    }
    counts
        .into_iter()
        .find(|&(_, count)| 2 * count > n)
        .map(|(item, _)| item)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub record_id: String,
    pub image_path: String,
    pub votes: Vec<AnnotationVote>,
    pub resolved_instrument: Option<InstrumentLabel>,
    pub resolved_defect: Option<DefectLabel>,
    pub status: AnnotationStatus,
    pub provenance: Provenance,
}

impl AnnotationRecord {
    /// Builds a record whose resolved labels come from [`resolve_label`].
    pub fn from_votes(
        record_id: impl Into<String>,
        image_path: impl Into<String>,
        votes: Vec<AnnotationVote>,
        provenance: Provenance,
    ) -> Result<Self> {
        let resolution = resolve_label(&votes)?;
        Ok(Self {
            record_id: record_id.into(),
            image_path: image_path.into(),
            votes,
            resolved_instrument: resolution.instrument,
            resolved_defect: resolution.defect,
            status: resolution.status,
            provenance,
        })
    }

    /// A record labeled directly, without annotator disagreement.
    pub fn labeled(
        record_id: impl Into<String>,
        image_path: impl Into<String>,
        instrument: InstrumentLabel,
        defect: DefectLabel,
        provenance: Provenance,
    ) -> Self {
        Self {
            record_id: record_id.into(),
            image_path: image_path.into(),
            votes: Vec::new(),
            resolved_instrument: Some(instrument),
            resolved_defect: Some(defect),
            status: AnnotationStatus::Resolved,
            provenance,
        }
    }

    /// Both labels, when resolved.
    pub fn labels(&self) -> Option<(InstrumentLabel, DefectLabel)> {
        match (self.status, self.resolved_instrument, self.resolved_defect) {
            (AnnotationStatus::Resolved, Some(i), Some(d)) => Some((i, d)),
            _ => None,
        }
    }

    pub fn is_augmented(&self) -> bool {
        matches!(self.provenance, Provenance::Augmented { .. })
    }

    fn check_consistency(&self) -> Result<()> {
        let both = self.resolved_instrument.is_some() && self.resolved_defect.is_some();
        let resolved = self.status == AnnotationStatus::Resolved;
        let misc_with_defect = self.resolved_instrument == Some(InstrumentLabel::Miscellaneous)
            && self.resolved_defect.is_some_and(DefectLabel::is_defect);
        if both != resolved || misc_with_defect {
            return Err(DatasetError::InconsistentRecord(self.record_id.clone()));
        }
        Ok(())
    }
}

/// An ordered collection of records plus optional split assignments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    records: Vec<AnnotationRecord>,
    splits: BTreeMap<String, Split>,
}

impl DatasetManifest {
    /// Validates id uniqueness, status consistency and augmented-parent links.
    pub fn new(records: Vec<AnnotationRecord>) -> Result<Self> {
        Self::with_splits(records, BTreeMap::new())
    }

    pub fn with_splits(records: Vec<AnnotationRecord>, splits: BTreeMap<String, Split>) -> Result<Self> {
        let mut ids = HashSet::with_capacity(records.len());
        for r in &records {
            if !ids.insert(r.record_id.as_str()) {
                return Err(DatasetError::DuplicateRecord(r.record_id.clone()));
            }
            r.check_consistency()?;
        }
        for r in &records {
            if let Provenance::Augmented { parent_id, .. } = &r.provenance {
                if !ids.contains(parent_id.as_str()) {
                    return Err(DatasetError::MissingParent {
                        record: r.record_id.clone(),
                        parent: parent_id.clone(),
                    });
                }
            }
        }
        let splits = splits
            .into_iter()
            .filter(|(id, _)| ids.contains(id.as_str()))
            .collect();
        Ok(Self { records, splits })
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, record_id: &str) -> Option<&AnnotationRecord> {
        self.records.iter().find(|r| r.record_id == record_id)
    }

    pub fn splits(&self) -> &BTreeMap<String, Split> {
        &self.splits
    }

    pub fn split_of(&self, record_id: &str) -> Option<Split> {
        self.splits.get(record_id).copied()
    }

    pub fn is_split(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| self.splits.contains_key(&r.record_id))
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &AnnotationRecord> {
        self.records
            .iter()
            .filter(move |r| self.splits.get(&r.record_id) == Some(&split))
    }

    pub fn into_parts(self) -> (Vec<AnnotationRecord>, BTreeMap<String, Split>) {
        (self.records, self.splits)
    }

    /// Returns the first record that is not resolved, if any.
    pub fn first_unresolved(&self) -> Option<&AnnotationRecord> {
        self.records.iter().find(|r| r.labels().is_none())
    }
}

/// Resizes to the 1600x1600 storage resolution.
pub fn standardize_image(img: &RasterImage) -> Result<RasterImage> {
    Ok(resize_bilinear(img, STANDARD_SIZE, STANDARD_SIZE)?)
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        let ok = parts.iter().all(|p| p.is_finite() && *p >= 0.0) && (parts.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(DatasetError::BadRatios(parts))
        }
    }

    /// `(train, val, test)` counts for a stratum of `k` records: val and test
    /// get the floor of their share, train takes the rest.
    pub fn counts(&self, k: usize) -> (usize, usize, usize) {
        let floor = |ratio: f64| ((ratio * k as f64) + 1e-9).floor() as usize;
        let val = floor(self.val).min(k);
        let test = floor(self.test).min(k - val);
        (k - val - test, val, test)
    }
}

/// Per-(instrument, defect) stratified split.
///
/// Within each stratum, record ids are sorted, shuffled with ChaCha8 seeded by
/// `(seed, stratum)`, then cut into val/test blocks of `floor(ratio * k)` with
/// the remainder in train. Augmented records follow their root parent.
pub fn stratified_split(manifest: &DatasetManifest, ratios: SplitRatios, seed: u64) -> Result<DatasetManifest> {
    ratios.validate()?;
    if let Some(r) = manifest.first_unresolved() {
        return Err(DatasetError::Unresolved(r.record_id.clone()));
    }

    let mut strata: BTreeMap<(InstrumentLabel, DefectLabel), Vec<&str>> = BTreeMap::new();
    for r in manifest.records().iter().filter(|r| !r.is_augmented()) {
        let key = r.labels().expect("checked resolved");
        strata.entry(key).or_default().push(&r.record_id);
    }

    let mut splits = BTreeMap::new();
    for ((instrument, defect), mut ids) in strata {
        ids.sort_unstable();
        let stratum_seed = seed::derive_str(seed, &format!("{instrument}/{defect}"));
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(stratum_seed));
        let (train, val, _) = ratios.counts(ids.len());
        for (i, id) in ids.into_iter().enumerate() {
            let split = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            splits.insert(id.to_string(), split);
        }
    }

    let by_id: HashMap<&str, &AnnotationRecord> =
        manifest.records().iter().map(|r| (r.record_id.as_str(), r)).collect();
    for r in manifest.records().iter().filter(|r| r.is_augmented()) {
        let root = root_parent(&by_id, r);
        let split = splits[root];
        splits.insert(r.record_id.clone(), split);
    }

    DatasetManifest::with_splits(manifest.records().to_vec(), splits)
}

fn root_parent<'a>(by_id: &HashMap<&str, &'a AnnotationRecord>, record: &'a AnnotationRecord) -> &'a str {
    let mut current = record;
    // Manifest validation guarantees parents exist; the bound stops cycles.
    for _ in 0..by_id.len() {
        match &current.provenance {
            Provenance::Augmented { parent_id, .. } => current = by_id[parent_id.as_str()],
            _ => break,
        }
    }
    &current.record_id
}

/// Instrument x defect count matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn new(row_labels: Vec<String>, col_labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        if counts.len() != row_labels.len() {
            return Err(DatasetError::MalformedTable(format!(
                "{} rows of counts for {} row labels",
                counts.len(),
                row_labels.len()
            )));
        }
        if let Some(row) = counts.iter().find(|row| row.len() != col_labels.len()) {
            return Err(DatasetError::MalformedTable(format!(
                "row with {} cells for {} columns",
                row.len(),
                col_labels.len()
            )));
        }
        Ok(Self {
            row_labels,
            col_labels,
            counts,
        })
    }

    /// Unlabeled table, rows and columns named by index.
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let rows = (0..counts.len()).map(|i| format!("r{i}")).collect();
        let cols = (0..counts.first().map_or(0, Vec::len)).map(|j| format!("c{j}")).collect();
        Self::new(rows, cols, counts)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.col_labels.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }
}

/// Counts resolved defective records per (instrument, defect).
///
/// Rows are the instruments that have at least one defective record, columns
/// the defect types that occur; both in canonical label order.
pub fn defect_contingency(manifest: &DatasetManifest) -> Result<ContingencyTable> {
    let mut cells: BTreeMap<(InstrumentLabel, DefectLabel), u64> = BTreeMap::new();
    for (instrument, defect) in manifest.records().iter().filter_map(AnnotationRecord::labels) {
        if instrument.is_miscellaneous() || !defect.is_defect() {
            continue;
        }
        *cells.entry((instrument, defect)).or_default() += 1;
    }
    if cells.is_empty() {
        return Err(DatasetError::NoDefects);
    }
    let rows: Vec<InstrumentLabel> = InstrumentLabel::ALL
        .into_iter()
        .filter(|i| cells.keys().any(|(ci, _)| ci == i))
        .collect();
    let cols: Vec<DefectLabel> = DefectLabel::ALL
        .into_iter()
        .filter(|d| cells.keys().any(|(_, cd)| cd == d))
        .collect();
    let counts = rows
        .iter()
        .map(|&i| cols.iter().map(|&d| cells.get(&(i, d)).copied().unwrap_or(0)).collect())
        .collect();
    ContingencyTable::new(
        rows.iter().map(|l| l.name().to_string()).collect(),
        cols.iter().map(|l| l.name().to_string()).collect(),
        counts,
    )
}
