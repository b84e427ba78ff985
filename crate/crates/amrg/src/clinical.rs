//! Clinical label extraction and report diffing.
//!
//! Pulls BI-RADS assessment codes and ACR breast-density categories out
//! of free-text reports, computes exact-match accuracies over labeled
//! cases, and classifies vocabulary terms as matched, hallucinated or
//! missed between a generated report and its reference.
//!
//! Extraction is grammar-based: when a report mentions a label several
//! times, the last mention wins, because final assessments come last in
//! radiology impressions.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{AmrgError, Result};
use crate::nlgmetrics::tokenize;

/// BI-RADS assessment code. The vocabulary is closed: codes 0-6 with the
/// 4a/4b/4c subdivisions, the verbatim compound "3 and 5" that occurs in
/// ambiguously labeled screening data, and "unlabeled". Code 6 is not
/// part of the screening distribution but belongs to the standard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BiradsLabel {
    B0,
    B1,
    B2,
    B3,
    B3And5,
    B4,
    B4a,
    B4b,
    B4c,
    B5,
    B6,
    Unlabeled,
}

impl BiradsLabel {
    /// Every label in table row order.
    pub const ALL: [BiradsLabel; 12] = [
        BiradsLabel::B0,
        BiradsLabel::B1,
        BiradsLabel::B2,
        BiradsLabel::B3,
        BiradsLabel::B3And5,
        BiradsLabel::B4,
        BiradsLabel::B4a,
        BiradsLabel::B4b,
        BiradsLabel::B4c,
        BiradsLabel::B5,
        BiradsLabel::B6,
        BiradsLabel::Unlabeled,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BiradsLabel::B0 => "0",
            BiradsLabel::B1 => "1",
            BiradsLabel::B2 => "2",
            BiradsLabel::B3 => "3",
            BiradsLabel::B3And5 => "3 and 5",
            BiradsLabel::B4 => "4",
            BiradsLabel::B4a => "4a",
            BiradsLabel::B4b => "4b",
            BiradsLabel::B4c => "4c",
            BiradsLabel::B5 => "5",
            BiradsLabel::B6 => "6",
            BiradsLabel::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for BiradsLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BiradsLabel {
    type Err = AmrgError;

    fn from_str(s: &str) -> Result<Self> {
        let normalized = s.trim().to_lowercase();
        let collapsed = normalized.split_whitespace().collect::<Vec<_>>().join(" ");
        for label in BiradsLabel::ALL {
            if label.as_str() == collapsed {
                return Ok(label);
            }
        }
        Err(AmrgError::InvalidInput(format!(
            "\"{s}\" is not a BI-RADS label"
        )))
    }
}

impl Serialize for BiradsLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for BiradsLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// ACR breast density category a-d, or "unlabeled".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DensityLabel {
    A,
    B,
    C,
    D,
    Unlabeled,
}

impl DensityLabel {
    pub const ALL: [DensityLabel; 5] = [
        DensityLabel::A,
        DensityLabel::B,
        DensityLabel::C,
        DensityLabel::D,
        DensityLabel::Unlabeled,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DensityLabel::A => "a",
            DensityLabel::B => "b",
            DensityLabel::C => "c",
            DensityLabel::D => "d",
            DensityLabel::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for DensityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DensityLabel {
    type Err = AmrgError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "a" => Ok(DensityLabel::A),
            "b" => Ok(DensityLabel::B),
            "c" => Ok(DensityLabel::C),
            "d" => Ok(DensityLabel::D),
            "unlabeled" => Ok(DensityLabel::Unlabeled),
            other => Err(AmrgError::InvalidInput(format!(
                "\"{other}\" is not an ACR density category"
            ))),
        }
    }
}

impl Serialize for DensityLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for DensityLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Common interface for labels that can be excluded from accuracy
/// denominators.
pub trait ClinicalLabel: PartialEq {
    fn is_unlabeled(&self) -> bool;
}

impl ClinicalLabel for BiradsLabel {
    fn is_unlabeled(&self) -> bool {
        *self == BiradsLabel::Unlabeled
    }
}

impl ClinicalLabel for DensityLabel {
    fn is_unlabeled(&self) -> bool {
        *self == DensityLabel::Unlabeled
    }
}

static BIRADS_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\bbi[\s-]*rads(?:\s*(?:category|code|assessment|score))?\s*[:\-]?\s*(3\s+and\s+5|4\s*[abc]|[0-6])\b",
    )
    .expect("static regex")
});

/// Extracts the BI-RADS code from a free-text report.
///
/// Recognizes "BI-RADS", "BIRADS" and "ACR BI-RADS" mentions with
/// optional "category" / "code" filler and an optional colon, in any
/// letter case. The last mention in the report wins; reports with no
/// mention return [`BiradsLabel::Unlabeled`].
pub fn extract_birads(report: &str) -> BiradsLabel {
    let Some(cap) = BIRADS_RE.captures_iter(report).last() else {
        return BiradsLabel::Unlabeled;
    };
    let raw = cap[1].to_lowercase();
    let code = if raw.contains("and") {
        "3 and 5".to_string()
    } else {
        raw.split_whitespace().collect()
    };
    code.parse().unwrap_or(BiradsLabel::Unlabeled)
}

static DENSITY_CODE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(?:acr\s+)?(?:breast\s+)?density(?:\s*(?:category|code|is|of))?\s*[:\-]?\s*([a-d])\b",
    )
    .expect("static regex")
});

/// One phrase-to-code rule of the density normalization table.
#[derive(Debug, Clone)]
struct DensityRule {
    phrase_tokens: Vec<String>,
    code: DensityLabel,
}

/// Breast-density normalization table: descriptor phrases mapped to ACR
/// codes. Editable so other corpora can remap their descriptor language.
#[derive(Debug, Clone)]
pub struct DensityTable {
    rules: Vec<DensityRule>,
}

impl DensityTable {
    /// Parses `phrase<TAB>code` lines; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (phrase, code) = line.split_once('\t').ok_or_else(|| {
                AmrgError::InvalidInput(format!(
                    "density table line {}: expected phrase<TAB>code",
                    idx + 1
                ))
            })?;
            rules.push(DensityRule {
                phrase_tokens: tokenize(phrase).tokens().to_vec(),
                code: code.parse()?,
            });
        }
        if rules.is_empty() {
            return Err(AmrgError::InvalidInput("density table has no rules".into()));
        }
        Ok(DensityTable { rules })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AmrgError::io(path, e))?;
        Self::from_text(&text)
    }
}

impl Default for DensityTable {
    fn default() -> Self {
        Self::from_text(include_str!("../resources/density_map.tsv"))
            .expect("embedded density table is well-formed")
    }
}

/// Extracts the ACR density category using the default table.
pub fn extract_density(report: &str) -> DensityLabel {
    static DEFAULT: LazyLock<DensityTable> = LazyLock::new(DensityTable::default);
    extract_density_with(report, &DEFAULT)
}

/// Extracts the ACR density category.
///
/// Explicit code mentions ("ACR density b", "density category: c") take
/// precedence; otherwise descriptor phrases are mapped through `table`.
/// Within either family the last mention wins, with longer phrases
/// breaking positional ties. No mention returns
/// [`DensityLabel::Unlabeled`].
pub fn extract_density_with(report: &str, table: &DensityTable) -> DensityLabel {
    if let Some(cap) = DENSITY_CODE_RE.captures_iter(report).last() {
        return cap[1].to_lowercase().parse().unwrap_or(DensityLabel::Unlabeled);
    }

    let tokens = tokenize(report);
    let tokens = tokens.tokens();
    let mut best: Option<(usize, usize, DensityLabel)> = None; // (end, len, code)
    for rule in &table.rules {
        let n = rule.phrase_tokens.len();
        if n == 0 || tokens.len() < n {
            continue;
        }
        for (start, window) in tokens.windows(n).enumerate() {
            if window == rule.phrase_tokens.as_slice() {
                let key = (start + n, n, rule.code);
                if best.is_none_or(|(e, l, _)| (key.0, key.1) > (e, l)) {
                    best = Some(key);
                }
            }
        }
    }
    best.map_or(DensityLabel::Unlabeled, |(_, _, code)| code)
}

/// Exact-match accuracy over label pairs.
///
/// Pairs whose gold label is unlabeled are excluded from the denominator.
/// Returns `None` when no labeled pairs remain, and an error when the
/// two lists differ in length.
pub fn label_accuracy<T: ClinicalLabel>(pred: &[T], gold: &[T]) -> Result<Option<f64>> {
    if pred.len() != gold.len() {
        return Err(AmrgError::LengthMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    let mut included = 0u64;
    let mut matched = 0u64;
    for (p, g) in pred.iter().zip(gold) {
        if g.is_unlabeled() {
            continue;
        }
        included += 1;
        if p == g {
            matched += 1;
        }
    }
    if included == 0 {
        return Ok(None);
    }
    Ok(Some(matched as f64 / included as f64))
}

/// Slots checked for term-level conflicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Birads,
    Density,
    Laterality,
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Slot::Birads => "birads",
            Slot::Density => "density",
            Slot::Laterality => "laterality",
        })
    }
}

/// A slot whose generated and reference values disagree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotConflict {
    pub slot: Slot,
    pub generated: String,
    pub reference: String,
}

/// Term-level comparison of a generated report against its reference.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TermDiff {
    /// Vocabulary terms found in both reports.
    pub matched: BTreeSet<String>,
    /// Terms only the generated report contains.
    pub hallucinated: BTreeSet<String>,
    /// Terms only the reference contains.
    pub missed: BTreeSet<String>,
    /// Slot-level disagreements (BI-RADS, density, laterality).
    pub conflicting: Vec<SlotConflict>,
}

/// Clinical term vocabulary used by [`term_diff`].
#[derive(Debug, Clone)]
pub struct TermVocab {
    // Sorted longest-first so greedy matching prefers specific phrases.
    phrases: Vec<(String, Vec<String>)>,
}

impl TermVocab {
    /// One phrase per line; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut phrases = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let toks = tokenize(line).tokens().to_vec();
            if !toks.is_empty() {
                phrases.push((line.to_lowercase(), toks));
            }
        }
        if phrases.is_empty() {
            return Err(AmrgError::InvalidInput("term vocabulary is empty".into()));
        }
        phrases.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
        Ok(TermVocab { phrases })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AmrgError::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    /// Terms present in `text`. Matching is greedy, longest phrase first;
    /// tokens consumed by a longer phrase are unavailable to shorter ones,
    /// so "calcified lymph node" suppresses a separate "lymph node" hit.
    fn terms_in(&self, text: &str) -> BTreeSet<String> {
        let tokens = tokenize(text);
        let tokens = tokens.tokens();
        let mut consumed = vec![false; tokens.len()];
        let mut found = BTreeSet::new();
        for (phrase, ptoks) in &self.phrases {
            let n = ptoks.len();
            if tokens.len() < n {
                continue;
            }
            for start in 0..=tokens.len() - n {
                let free = (start..start + n).all(|i| !consumed[i]);
                if free && tokens[start..start + n] == ptoks[..] {
                    consumed[start..start + n].iter_mut().for_each(|c| *c = true);
                    found.insert(phrase.clone());
                }
            }
        }
        found
    }
}

impl Default for TermVocab {
    fn default() -> Self {
        Self::from_text(include_str!("../resources/clinical_terms.txt"))
            .expect("embedded term vocabulary is well-formed")
    }
}

/// Laterality words mentioned by a report, reduced to one slot value.
fn laterality_slot(report: &str) -> Option<&'static str> {
    let tokens = tokenize(report);
    let has = |w: &str| tokens.tokens().iter().any(|t| t == w);
    match (has("left"), has("right"), has("bilateral")) {
        (_, _, true) | (true, true, false) => Some("bilateral"),
        (true, false, false) => Some("left"),
        (false, true, false) => Some("right"),
        (false, false, false) => None,
    }
}

/// Classifies vocabulary terms between a generated report and its
/// reference, and reports slot-level conflicts for BI-RADS, density and
/// laterality. Slots only conflict when both reports commit to a value.
pub fn term_diff(generated: &str, reference: &str, vocab: &TermVocab) -> Result<TermDiff> {
    if vocab.is_empty() {
        return Err(AmrgError::InvalidInput("term vocabulary is empty".into()));
    }
    let gen_terms = vocab.terms_in(generated);
    let ref_terms = vocab.terms_in(reference);

    let matched = gen_terms.intersection(&ref_terms).cloned().collect();
    let hallucinated = gen_terms.difference(&ref_terms).cloned().collect();
    let missed = ref_terms.difference(&gen_terms).cloned().collect();

    let mut conflicting = Vec::new();
    let (gb, rb) = (extract_birads(generated), extract_birads(reference));
    if !gb.is_unlabeled() && !rb.is_unlabeled() && gb != rb {
        conflicting.push(SlotConflict {
            slot: Slot::Birads,
            generated: gb.to_string(),
            reference: rb.to_string(),
        });
    }
    let (gd, rd) = (extract_density(generated), extract_density(reference));
    if !gd.is_unlabeled() && !rd.is_unlabeled() && gd != rd {
        conflicting.push(SlotConflict {
            slot: Slot::Density,
            generated: gd.to_string(),
            reference: rd.to_string(),
        });
    }
    if let (Some(gl), Some(rl)) = (laterality_slot(generated), laterality_slot(reference)) {
        if gl != rl {
            conflicting.push(SlotConflict {
                slot: Slot::Laterality,
                generated: gl.to_string(),
                reference: rl.to_string(),
            });
        }
    }

    Ok(TermDiff {
        matched,
        hallucinated,
        missed,
        conflicting,
    })
}
