use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::combos::is_known_combination;
use super::record::{Crop, ImageRecord, Portion, Timestamp};
use super::taxonomy::Taxonomy;
use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<ImageRecord>,
    pub taxonomy: Taxonomy,
    pub source_notes: String,
    /// Directory that record URIs are resolved against.
    pub image_root: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<ImageRecord>, taxonomy: Taxonomy, image_root: impl Into<PathBuf>) -> Self {
        Self {
            records,
            taxonomy,
            source_notes: String::new(),
            image_root: image_root.into(),
        }
    }

    pub fn resolve(&self, record: &ImageRecord) -> PathBuf {
        let uri = Path::new(&record.uri);
        if uri.is_absolute() {
            uri.to_path_buf()
        } else {
            self.image_root.join(uri)
        }
    }

    pub fn get(&self, record_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.record_id == record_id)
    }

    pub fn by_id(&self) -> BTreeMap<&str, &ImageRecord> {
        self.records.iter().map(|r| (r.record_id.as_str(), r)).collect()
    }
}

/// A manifest row that was not accepted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowFlag {
    pub line: usize,
    pub record_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestOutcome {
    pub manifest: Manifest,
    pub flagged: Vec<RowFlag>,
}

/// Ingests with the seeded taxonomy.
pub fn ingest_manifest(manifest_file: &Path, image_root: &Path) -> Result<IngestOutcome> {
    ingest_manifest_with(manifest_file, image_root, Taxonomy::seeded())
}

/// Reads a line-delimited manifest. Malformed rows and rows with unknown
/// species are flagged and left out; duplicate record IDs are fatal.
pub fn ingest_manifest_with(
    manifest_file: &Path,
    image_root: &Path,
    taxonomy: Taxonomy,
) -> Result<IngestOutcome> {
    let lines = jsonl::read_raw_lines(manifest_file)?;
    let mut records = Vec::with_capacity(lines.len());
    let mut flagged = Vec::new();
    let mut first_seen: BTreeMap<String, usize> = BTreeMap::new();

    for (line, text) in lines {
        let mut record: ImageRecord = match serde_json::from_str(&text) {
            Ok(r) => r,
            Err(e) => {
                let record_id = serde_json::from_str::<serde_json::Value>(&text)
                    .ok()
                    .and_then(|v| v.get("record_id")?.as_str().map(str::to_string));
                flagged.push(RowFlag {
                    line,
                    record_id,
                    reason: format!("malformed row: {e}"),
                });
                continue;
            }
        };
        if let Some(&first_line) = first_seen.get(&record.record_id) {
            return Err(Error::DuplicateRecord {
                record_id: record.record_id,
                first_line,
                line,
            });
        }
        first_seen.insert(record.record_id.clone(), line);

        let reason = if record.record_id.trim().is_empty() {
            Some("empty record_id".to_string())
        } else if record.field_id.trim().is_empty() {
            Some("empty field_id".to_string())
        } else {
            None
        };
        if let Some(reason) = reason {
            flagged.push(RowFlag {
                line,
                record_id: Some(record.record_id),
                reason,
            });
            continue;
        }
        match taxonomy.resolve(&record.pest_label) {
            Some(taxon) => record.pest_label = taxon.canonical_label().to_string(),
            None => {
                flagged.push(RowFlag {
                    line,
                    record_id: Some(record.record_id),
                    reason: format!("unknown species {:?}", record.pest_label),
                });
                continue;
            }
        }
        records.push(record);
    }

    Ok(IngestOutcome {
        manifest: Manifest {
            records,
            taxonomy,
            source_notes: format!("ingested from {}", manifest_file.display()),
            image_root: image_root.to_path_buf(),
        },
        flagged,
    })
}

pub fn write_manifest(path: &Path, records: &[ImageRecord]) -> Result<()> {
    jsonl::write_lines(path, records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    FileNotFound,
    ZeroDimension,
    ImplausibleTimestamp,
    UnknownCombination,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub record_id: String,
    pub kind: IssueKind,
    pub message: String,
}

fn plausible_range() -> (Timestamp, Timestamp) {
    let start = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
    let end = NaiveDate::from_ymd_opt(2100, 1, 1).unwrap();
    (
        Timestamp(start.and_hms_opt(0, 0, 0).unwrap()),
        Timestamp(end.and_hms_opt(0, 0, 0).unwrap()),
    )
}

/// Machine-checkable record conditions. Pure report; never fails.
pub fn validate_records(manifest: &Manifest) -> Vec<ValidationIssue> {
    let (earliest, latest) = plausible_range();
    let mut issues = Vec::new();
    for r in &manifest.records {
        let mut push = |kind, message: String| {
            issues.push(ValidationIssue {
                record_id: r.record_id.clone(),
                kind,
                message,
            })
        };
        let path = manifest.resolve(r);
        if !path.is_file() {
            push(IssueKind::FileNotFound, format!("file not found: {}", path.display()));
        }
        if r.width_px == 0 || r.height_px == 0 {
            push(
                IssueKind::ZeroDimension,
                format!("zero dimension {}x{}", r.width_px, r.height_px),
            );
        }
        if r.captured_at < earliest || r.captured_at >= latest {
            push(
                IssueKind::ImplausibleTimestamp,
                format!("implausible timestamp {}", r.captured_at),
            );
        }
        if !is_known_combination(&manifest.taxonomy, &r.pest_label, r.portion, r.crop) {
            push(
                IssueKind::UnknownCombination,
                format!(
                    "unknown combination {} / {} / {}",
                    r.pest_label, r.portion, r.crop
                ),
            );
        }
    }
    issues
}

/// Conjunctive record filter; `None` fields match everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordFilter {
    pub crop: Option<Crop>,
    pub portion: Option<Portion>,
    pub pest_label: Option<String>,
    pub field_id: Option<String>,
    /// Inclusive capture-date range.
    pub date_range: Option<(NaiveDate, NaiveDate)>,
}

impl RecordFilter {
    pub fn matches(&self, r: &ImageRecord) -> bool {
        self.crop.is_none_or(|c| r.crop == c)
            && self.portion.is_none_or(|p| r.portion == p)
            && self
                .pest_label
                .as_deref()
                .is_none_or(|l| r.pest_label.eq_ignore_ascii_case(l))
            && self.field_id.as_deref().is_none_or(|f| r.field_id == f)
            && self.date_range.is_none_or(|(from, to)| {
                let d = r.captured_at.date();
                from <= d && d <= to
            })
    }
}

/// Matching records ordered by record_id.
pub fn query_records<'a>(manifest: &'a Manifest, filter: &RecordFilter) -> Vec<&'a ImageRecord> {
    let mut out: Vec<&ImageRecord> = manifest.records.iter().filter(|r| filter.matches(r)).collect();
    out.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    out
}

#[cfg(test)]
mod tests {
    use std::fs;

    use proptest::prelude::*;

    use super::*;
    use crate::catalog::known_combinations;

    fn row(id: &str, crop: &str, portion: &str, label: &str) -> String {
        format!(
            r#"{{"record_id":"{id}","uri":"{id}.png","crop":"{crop}","portion":"{portion}","pest_label":"{label}","field_id":"F1","captured_at":"2021-06-01T10:00:00","width_px":64,"height_px":64}}"#
        )
    }

    fn write(dir: &Path, rows: &[String]) -> PathBuf {
        let path = dir.join("manifest.jsonl");
        fs::write(&path, rows.join("\n")).unwrap();
        path
    }

    fn record(id: &str, crop: Crop, portion: Portion, label: &str) -> ImageRecord {
        ImageRecord {
            record_id: id.into(),
            uri: format!("{id}.png"),
            crop,
            portion,
            pest_label: label.into(),
            field_id: "F1".into(),
            captured_at: Timestamp::parse("2021-06-01T10:00:00").unwrap(),
            device_id: None,
            width_px: 64,
            height_px: 64,
        }
    }

    #[test]
    fn three_valid_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            &[
                row("a", "tomato", "leaf_back", "whitefly"),
                row("b", "cucumber", "leaf_front", "melon thrips"),
                row("c", "eggplant", "fruit", "healthy"),
            ],
        );
        let out = ingest_manifest(&path, dir.path()).unwrap();
        assert_eq!(out.manifest.records.len(), 3);
        assert!(out.flagged.is_empty());
    }

    #[test]
    fn unknown_species_row_is_flagged_and_excluded() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            &[
                row("a", "tomato", "leaf_back", "whitefly"),
                row("b", "tomato", "leaf_back", "unicorn moth"),
            ],
        );
        let out = ingest_manifest(&path, dir.path()).unwrap();
        assert_eq!(out.manifest.records.len(), 1);
        assert_eq!(out.flagged.len(), 1);
        assert_eq!(out.flagged[0].line, 2);
        assert!(out.flagged[0].reason.contains("unknown species"));
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let mut bad = row("b", "tomato", "leaf_back", "whitefly");
        bad = bad.replace("2021-06-01T10:00:00", "not a time");
        let path = write(
            dir.path(),
            &[
                "# collected 2021".into(),
                row("a", "tomato", "leaf_back", "whitefly"),
                bad,
                "{not json".into(),
                row("c", "potato", "leaf_back", "whitefly"),
            ],
        );
        let out = ingest_manifest(&path, dir.path()).unwrap();
        assert_eq!(out.manifest.records.len(), 1);
        let lines: Vec<usize> = out.flagged.iter().map(|f| f.line).collect();
        assert_eq!(lines, [3, 4, 5]);
        assert_eq!(out.flagged[0].record_id.as_deref(), Some("b"));
    }

    #[test]
    fn duplicate_record_id_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            &[
                row("a", "tomato", "leaf_back", "whitefly"),
                row("a", "tomato", "leaf_front", "whitefly"),
            ],
        );
        match ingest_manifest(&path, dir.path()) {
            Err(Error::DuplicateRecord { first_line, line, .. }) => {
                assert_eq!((first_line, line), (1, 2))
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn unreadable_file_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            ingest_manifest(&dir.path().join("missing.jsonl"), dir.path()),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn labels_are_canonicalized_and_ingest_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), &[row("a", "cucumber", "leaf_front", "kanzawa SPIDER mite")]);
        let first = ingest_manifest(&path, dir.path()).unwrap();
        assert_eq!(first.manifest.records[0].pest_label, "Kanzawa spider mite");
        let second = ingest_manifest(&path, dir.path()).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn whitefly_on_tomato_leaf_back_is_a_known_combination() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.png"), b"").unwrap();
        let m = Manifest::new(
            vec![record("a", Crop::Tomato, Portion::LeafBack, "whitefly")],
            Taxonomy::seeded(),
            dir.path(),
        );
        assert!(validate_records(&m).is_empty());
    }

    #[test]
    fn validation_flags_each_condition() {
        let dir = tempfile::tempdir().unwrap();
        let mut old = record("old", Crop::Tomato, Portion::LeafFront, "healthy");
        old.captured_at = Timestamp::parse("1970-01-01T00:00:00").unwrap();
        let mut flat = record("flat", Crop::Tomato, Portion::LeafFront, "healthy");
        flat.width_px = 0;
        let odd = record("odd", Crop::Tomato, Portion::Flower, "hadda beetle");
        for r in [&old, &flat, &odd] {
            fs::write(dir.path().join(&r.uri), b"").unwrap();
        }
        let missing = record("missing", Crop::Tomato, Portion::LeafFront, "healthy");
        let m = Manifest::new(vec![old, flat, odd, missing], Taxonomy::seeded(), dir.path());
        let issues: Vec<(String, IssueKind)> = validate_records(&m)
            .into_iter()
            .map(|i| (i.record_id, i.kind))
            .collect();
        assert_eq!(
            issues,
            [
                ("old".to_string(), IssueKind::ImplausibleTimestamp),
                ("flat".to_string(), IssueKind::ZeroDimension),
                ("odd".to_string(), IssueKind::UnknownCombination),
                ("missing".to_string(), IssueKind::FileNotFound),
            ]
        );
        let msg = &validate_records(&m)[0].message;
        assert!(msg.contains("implausible timestamp"));
    }

    #[test]
    fn all_known_combinations_validate_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let records: Vec<ImageRecord> = known_combinations()
            .iter()
            .enumerate()
            .map(|(i, c)| record(&format!("r{i:02}"), c.crop, c.portion, c.pest))
            .collect();
        for r in &records {
            fs::write(dir.path().join(&r.uri), b"").unwrap();
        }
        let m = Manifest::new(records, Taxonomy::seeded(), dir.path());
        let combo_issues = validate_records(&m)
            .into_iter()
            .filter(|i| i.kind == IssueKind::UnknownCombination)
            .count();
        assert_eq!(combo_issues, 0);
    }

    #[test]
    fn query_by_crop_and_label() {
        let mut records = Vec::new();
        for i in 0..5353 {
            records.push(record(&format!("w{i:05}"), Crop::Cucumber, Portion::LeafBack, "whitefly"));
        }
        for i in 0..40 {
            records.push(record(&format!("t{i:03}"), Crop::Tomato, Portion::LeafBack, "whitefly"));
            records.push(record(&format!("c{i:03}"), Crop::Cucumber, Portion::LeafBack, "healthy"));
        }
        let m = Manifest::new(records, Taxonomy::seeded(), "/nonexistent");
        let filter = RecordFilter {
            crop: Some(Crop::Cucumber),
            pest_label: Some("whitefly".into()),
            ..Default::default()
        };
        let hits = query_records(&m, &filter);
        assert_eq!(hits.len(), 5353);
        assert!(hits.windows(2).all(|w| w[0].record_id < w[1].record_id));
        assert_eq!(query_records(&m, &RecordFilter::default()).len(), m.records.len());
        let none = RecordFilter {
            field_id: Some("F9".into()),
            ..Default::default()
        };
        assert!(query_records(&m, &none).is_empty());
    }

    fn arb_record() -> impl Strategy<Value = ImageRecord> {
        (
            0..4usize,
            0..4usize,
            prop::sample::select(vec!["healthy", "whitefly", "melon thrips"]),
            prop::sample::select(vec!["F1", "F2", "F3"]),
            1u32..28,
            any::<u32>(),
        )
            .prop_map(|(c, p, label, field, day, id)| {
                let mut r = record(&format!("r{id:010}"), Crop::ALL[c], Portion::ALL[p], label);
                r.field_id = field.into();
                r.captured_at = Timestamp::parse(&format!("2021-06-{day:02}T08:00:00")).unwrap();
                r
            })
    }

    proptest! {
        #[test]
        fn conjunctive_filter_equals_sequential_filtering(
            records in prop::collection::vec(arb_record(), 0..60),
            crop in prop::option::of(0..4usize),
            field in prop::option::of(prop::sample::select(vec!["F1", "F2"])),
            label in prop::option::of(prop::sample::select(vec!["healthy", "whitefly"])),
            from in 1u32..28,
        ) {
            let m = Manifest::new(records, Taxonomy::seeded(), "/nonexistent");
            let date_range = Some((
                NaiveDate::from_ymd_opt(2021, 6, from).unwrap(),
                NaiveDate::from_ymd_opt(2021, 6, 27).unwrap(),
            ));
            let all = RecordFilter {
                crop: crop.map(|c| Crop::ALL[c]),
                field_id: field.map(Into::into),
                pest_label: label.map(Into::into),
                date_range,
                ..Default::default()
            };
            let singles = [
                RecordFilter { date_range, ..Default::default() },
                RecordFilter { pest_label: all.pest_label.clone(), ..Default::default() },
                RecordFilter { field_id: all.field_id.clone(), ..Default::default() },
                RecordFilter { crop: all.crop, ..Default::default() },
            ];
            let mut seq: Vec<&ImageRecord> = m.records.iter().collect();
            for f in &singles {
                seq.retain(|r| f.matches(r));
            }
            seq.sort_by(|a, b| a.record_id.cmp(&b.record_id));
            prop_assert_eq!(query_records(&m, &all), seq);
        }
    }
}
