//! JSON-lines manifest persistence.
//!
//! One [`AnnotationRecord`] per line. Split assignments, when present, live
//! in a sidecar `<stem>.splits.json` object mapping record id to split.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{AnnotationRecord, DatasetError, DatasetManifest, Result, Split};

pub fn splits_path(manifest_path: &Path) -> PathBuf {
    let stem = manifest_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".to_string());
    manifest_path.with_file_name(format!("{stem}.splits.json"))
}

/// Reads records without manifest-level validation. Blank lines are skipped.
pub fn read_records(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| DatasetError::Parse { line: i + 1, source })?;
        records.push(record);
    }
    Ok(records)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let records = read_records(path)?;
    let sidecar = splits_path(path);
    let splits: BTreeMap<String, Split> = if sidecar.exists() {
        serde_json::from_reader(BufReader::new(File::open(sidecar)?))?
    } else {
        BTreeMap::new()
    };
    DatasetManifest::with_splits(records, splits)
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    for record in manifest.records() {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    let sidecar = splits_path(path);
    if manifest.splits().is_empty() {
        if sidecar.exists() {
            std::fs::remove_file(sidecar)?;
        }
    } else {
        let mut out = BufWriter::new(File::create(sidecar)?);
        serde_json::to_writer_pretty(&mut out, manifest.splits())?;
        out.write_all(b"\n")?;
        out.flush()?;
    }
    Ok(())
}

/// Appends one record and syncs it to disk.
pub fn append_record(path: &Path, record: &AnnotationRecord) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut line = serde_json::to_vec(record)?;
    line.push(b'\n');
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(&line)?;
    file.sync_data()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{
        stratified_split, AnnotationVote, DefectLabel, InstrumentLabel, Provenance, SplitRatios,
    };

    #[test]
    fn round_trip_with_splits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data/manifest.jsonl");
        let mut records: Vec<_> = (0..10)
            .map(|i| {
                AnnotationRecord::labeled(
                    format!("r{i}"),
                    format!("images/r{i}.png"),
                    InstrumentLabel::NailClipper,
                    DefectLabel::Pores,
                    Provenance::Original,
                )
            })
            .collect();
        records.push(
            AnnotationRecord::from_votes(
                "voted",
                "images/voted.png",
                vec![
                    AnnotationVote::new("x", InstrumentLabel::Probe, DefectLabel::Cuts).unwrap(),
                    AnnotationVote::new("y", InstrumentLabel::Probe, DefectLabel::Cuts).unwrap(),
                ],
                Provenance::ReviewDecision { scan_id: "s1".into() },
            )
            .unwrap(),
        );
        let m = DatasetManifest::new(records).unwrap();
        let m = stratified_split(&m, SplitRatios::default(), 11).unwrap();
        write_manifest(&m, &path).unwrap();
        assert!(splits_path(&path).ends_with("manifest.splits.json"));
        assert_eq!(read_manifest(&path).unwrap(), m);

        let extra = AnnotationRecord::labeled(
            "late",
            "images/late.png",
            InstrumentLabel::Carver,
            DefectLabel::NoDefect,
            Provenance::Synthetic,
        );
        append_record(&path, &extra).unwrap();
        let records = read_records(&path).unwrap();
        assert_eq!(records.len(), 12);
        assert_eq!(records.last().unwrap(), &extra);
    }

    #[test]
    fn field_names_are_stable() {
        let r = AnnotationRecord::labeled(
            "a",
            "b.png",
            InstrumentLabel::TvForceps,
            DefectLabel::NoDefect,
            Provenance::Augmented {
                parent_id: "p".into(),
                transform: "rot90".into(),
            },
        );
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["resolved_instrument"], "TV Forceps");
        assert_eq!(v["status"], "resolved");
        assert_eq!(v["provenance"]["kind"], "augmented");
        assert_eq!(v["provenance"]["parent_id"], "p");
    }

    #[test]
    fn parse_error_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, "\n{\"bogus\": 1}\n").unwrap();
        assert!(matches!(read_records(&path), Err(DatasetError::Parse { line: 2, .. })));
    }
}
