//! Manifest loading, split statistics and distribution validation.
//!
//! A manifest is JSON Lines, one case per line. JSONL is used instead of
//! CSV because report text carries commas and newlines. Records may lack
//! gold labels; downstream accuracy computations skip them instead of
//! failing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clinical::{BiradsLabel, DensityLabel};
use crate::error::{AmrgError, Result};

/// Which breast an image depicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Laterality {
    Left,
    Right,
    #[default]
    Unknown,
}

/// Dataset split tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// One dataset case: image paths, laterality, the reference report and
/// optional gold labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRecord {
    pub case_id: String,
    pub image_paths: Vec<String>,
    pub laterality: Laterality,
    pub report_text: String,
    pub birads_gold: Option<BiradsLabel>,
    pub density_gold: Option<DensityLabel>,
    pub split: Split,
}

/// Wire format of one manifest line. Unknown fields are ignored; absent
/// laterality defaults to unknown.
#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    case_id: String,
    image_paths: Vec<String>,
    #[serde(default)]
    laterality: Option<Laterality>,
    report_text: String,
    #[serde(default)]
    birads: Option<BiradsLabel>,
    #[serde(default)]
    density: Option<DensityLabel>,
    split: Split,
}

impl From<ReportRecord> for RawRecord {
    fn from(r: ReportRecord) -> Self {
        RawRecord {
            case_id: r.case_id,
            image_paths: r.image_paths,
            laterality: match r.laterality {
                Laterality::Unknown => None,
                other => Some(other),
            },
            report_text: r.report_text,
            birads: r.birads_gold,
            density: r.density_gold,
            split: r.split,
        }
    }
}

/// Loads a JSONL manifest, preserving file order.
///
/// A malformed line fails with its 1-based line number; a repeated
/// case_id fails naming the id. Lines that are entirely whitespace are
/// skipped.
pub fn load_manifest(path: &Path) -> Result<Vec<ReportRecord>> {
    let text = fs::read_to_string(path).map_err(|e| AmrgError::io(path, e))?;
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| AmrgError::Manifest {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if raw.image_paths.is_empty() {
            return Err(AmrgError::Manifest {
                line: idx + 1,
                message: format!("case \"{}\" has no image paths", raw.case_id),
            });
        }
        if !seen.insert(raw.case_id.clone()) {
            return Err(AmrgError::DuplicateCaseId(raw.case_id));
        }
        records.push(ReportRecord {
            case_id: raw.case_id,
            image_paths: raw.image_paths,
            laterality: raw.laterality.unwrap_or_default(),
            report_text: raw.report_text,
            birads_gold: raw.birads,
            density_gold: raw.density,
            split: raw.split,
        });
    }
    Ok(records)
}

/// Writes records as JSONL, one per line, inverse of [`load_manifest`].
pub fn write_manifest(records: &[ReportRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for record in records {
        let raw: RawRecord = record.clone().into();
        out.push_str(&serde_json::to_string(&raw)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| AmrgError::io(path, e))
}

/// Per-split BI-RADS label counts. Records without a gold label are
/// counted under the "unlabeled" key.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitStats {
    counts: BTreeMap<Split, BTreeMap<BiradsLabel, u64>>,
}

impl SplitStats {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds stats from `(label, [train, val, test])` rows.
    pub fn from_rows(rows: &[(BiradsLabel, [u64; 3])]) -> Self {
        let mut stats = SplitStats::new();
        for &(label, per_split) in rows {
            for (split, &count) in Split::ALL.iter().zip(&per_split) {
                if count > 0 {
                    stats.add(*split, label, count);
                }
            }
        }
        stats
    }

    fn add(&mut self, split: Split, label: BiradsLabel, count: u64) {
        *self
            .counts
            .entry(split)
            .or_default()
            .entry(label)
            .or_insert(0) += count;
    }

    pub fn count(&self, split: Split, label: BiradsLabel) -> u64 {
        self.counts
            .get(&split)
            .and_then(|m| m.get(&label))
            .copied()
            .unwrap_or(0)
    }

    /// Total records in one split.
    pub fn total(&self, split: Split) -> u64 {
        self.counts
            .get(&split)
            .map(|m| m.values().sum())
            .unwrap_or(0)
    }

    /// Labels appearing in any split, in table row order.
    pub fn labels(&self) -> BTreeSet<BiradsLabel> {
        self.counts.values().flat_map(|m| m.keys().copied()).collect()
    }
}

/// Counts records per (split, BI-RADS label).
pub fn split_stats(records: &[ReportRecord]) -> SplitStats {
    let mut stats = SplitStats::new();
    for record in records {
        let label = record.birads_gold.unwrap_or(BiradsLabel::Unlabeled);
        stats.add(record.split, label, 1);
    }
    stats
}

/// A (split, label) cell whose observed count differs from the expected
/// one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub split: Split,
    pub label: BiradsLabel,
    pub expected: u64,
    pub actual: u64,
}

impl fmt::Display for Discrepancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}: expected {}, got {}",
            self.split, self.label, self.expected, self.actual
        )
    }
}

/// Compares observed stats against expected ones cell by cell. The result
/// is empty exactly when every (split, label) count matches; cells absent
/// from one side count as zero.
pub fn validate_against(stats: &SplitStats, expected: &SplitStats) -> Vec<Discrepancy> {
    let mut labels = stats.labels();
    labels.extend(expected.labels());
    let mut discrepancies = Vec::new();
    for split in Split::ALL {
        for &label in &labels {
            let actual = stats.count(split, label);
            let want = expected.count(split, label);
            if actual != want {
                discrepancies.push(Discrepancy {
                    split,
                    label,
                    expected: want,
                    actual,
                });
            }
        }
    }
    discrepancies
}

/// The published BI-RADS distribution of the DMID screening corpus:
/// 407 train / 51 validation / 52 test cases.
pub fn dmid_reference_stats() -> SplitStats {
    use BiradsLabel::*;
    SplitStats::from_rows(&[
        (B0, [1, 0, 0]),
        (B1, [157, 30, 22]),
        (B2, [24, 1, 5]),
        (B3, [109, 10, 9]),
        (B3And5, [1, 0, 0]),
        (B4, [3, 0, 0]),
        (B4a, [31, 1, 5]),
        (B4b, [26, 0, 5]),
        (B4c, [39, 7, 6]),
        (B5, [16, 2, 0]),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn record(case_id: &str, split: Split, birads: Option<BiradsLabel>) -> ReportRecord {
        ReportRecord {
            case_id: case_id.into(),
            image_paths: vec![format!("{case_id}.png")],
            laterality: Laterality::Left,
            report_text: "No focal lesion.".into(),
            birads_gold: birads,
            density_gold: None,
            split,
        }
    }

    #[test]
    fn load_single_line_manifest() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            file,
            r#"{{"case_id":"c1","image_paths":["a.png"],"report_text":"text","split":"test"}}"#
        )
        .unwrap();
        let records = load_manifest(file.path()).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].case_id, "c1");
        assert_eq!(records[0].split, Split::Test);
        assert_eq!(records[0].laterality, Laterality::Unknown);
    }

    #[test]
    fn load_empty_file_is_empty_list() {
        let file = tempfile::NamedTempFile::new().unwrap();
        assert!(load_manifest(file.path()).unwrap().is_empty());
    }

    #[test]
    fn duplicate_case_id_is_an_error() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for _ in 0..2 {
            writeln!(
                file,
                r#"{{"case_id":"c1","image_paths":["a.png"],"report_text":"t","split":"train"}}"#
            )
            .unwrap();
        }
        let err = load_manifest(file.path()).unwrap_err();
        assert!(err.to_string().contains("c1"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            file,
            r#"{{"case_id":"c1","image_paths":["a.png"],"report_text":"t","split":"train"}}"#
        )
        .unwrap();
        writeln!(file, "{{not json").unwrap();
        let err = load_manifest(file.path()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            file,
            r#"{{"case_id":"c1","image_paths":["a.png"],"report_text":"t","split":"val","extra":42}}"#
        )
        .unwrap();
        assert_eq!(load_manifest(file.path()).unwrap().len(), 1);
    }

    #[test]
    fn empty_image_paths_rejected() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            file,
            r#"{{"case_id":"c1","image_paths":[],"report_text":"t","split":"val"}}"#
        )
        .unwrap();
        assert!(load_manifest(file.path()).is_err());
    }

    #[test]
    fn manifest_roundtrip_is_identity() {
        let records = vec![
            record("a", Split::Train, Some(BiradsLabel::B4c)),
            record("b", Split::Val, None),
            ReportRecord {
                case_id: "c".into(),
                image_paths: vec!["x.png".into(), "y.png".into()],
                laterality: Laterality::Unknown,
                report_text: "line one\nline two, with commas".into(),
                birads_gold: Some(BiradsLabel::B3And5),
                density_gold: Some(DensityLabel::C),
                split: Split::Test,
            },
        ];
        let file = tempfile::NamedTempFile::new().unwrap();
        write_manifest(&records, file.path()).unwrap();
        assert_eq!(load_manifest(file.path()).unwrap(), records);
    }

    #[test]
    fn split_stats_counts_unlabeled_separately() {
        let records = vec![
            record("a", Split::Train, Some(BiradsLabel::B1)),
            record("b", Split::Train, None),
            record("c", Split::Test, Some(BiradsLabel::B1)),
        ];
        let stats = split_stats(&records);
        assert_eq!(stats.count(Split::Train, BiradsLabel::B1), 1);
        assert_eq!(stats.count(Split::Train, BiradsLabel::Unlabeled), 1);
        assert_eq!(stats.total(Split::Train), 2);
        assert_eq!(stats.total(Split::Test), 1);
        assert_eq!(stats.total(Split::Val), 0);
    }

    #[test]
    fn empty_records_count_zero() {
        let stats = split_stats(&[]);
        for split in Split::ALL {
            assert_eq!(stats.total(split), 0);
        }
    }

    #[test]
    fn validate_against_self_is_empty() {
        let stats = dmid_reference_stats();
        assert!(validate_against(&stats, &stats).is_empty());
    }

    #[test]
    fn validate_flags_single_count_difference() {
        let expected = dmid_reference_stats();
        let mut rows: Vec<(BiradsLabel, [u64; 3])> = vec![(BiradsLabel::B1, [156, 30, 22])];
        for label in [BiradsLabel::B0, BiradsLabel::B2] {
            rows.push((
                label,
                [
                    expected.count(Split::Train, label),
                    expected.count(Split::Val, label),
                    expected.count(Split::Test, label),
                ],
            ));
        }
        let stats = SplitStats::from_rows(&rows);
        let discrepancies = validate_against(&stats, &expected);
        let flagged = discrepancies
            .iter()
            .find(|d| d.split == Split::Train && d.label == BiradsLabel::B1)
            .expect("train/1 must be flagged");
        assert_eq!(flagged.expected, 157);
        assert_eq!(flagged.actual, 156);
    }

    #[test]
    fn validate_reports_missing_labels_as_zero() {
        let expected = SplitStats::from_rows(&[(BiradsLabel::B4c, [0, 0, 6])]);
        let stats = SplitStats::new();
        let discrepancies = validate_against(&stats, &expected);
        assert_eq!(discrepancies.len(), 1);
        assert_eq!(discrepancies[0].actual, 0);
        assert_eq!(discrepancies[0].expected, 6);
    }

    #[test]
    fn dmid_totals_match_published_split() {
        let stats = dmid_reference_stats();
        assert_eq!(stats.total(Split::Train), 407);
        assert_eq!(stats.total(Split::Val), 51);
        assert_eq!(stats.total(Split::Test), 52);
    }
}
