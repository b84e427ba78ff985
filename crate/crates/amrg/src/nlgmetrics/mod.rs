//! Reference-based text generation metrics.
//!
//! Implements the scores reported for report generation runs: BLEU-1,
//! ROUGE-1/2/L, METEOR, CIDEr-D, and word-level F1, plus corpus
//! aggregation into a [`MetricBundle`]. Everything here is implemented
//! from first principles so results can be checked against independent
//! oracles; no external evaluation kit is wrapped.
//!
//! All metrics share one tokenizer: lowercase, split on runs of
//! non-alphanumeric characters. Alphanumeric tokens like `4c` survive
//! whole, which matters for clinical codes.

mod cider;
mod meteor;
pub mod stem;

pub use cider::{cider, CiderScores};
pub use meteor::meteor;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{AmrgError, Result};

/// A tokenized sentence. Only [`tokenize`] constructs these, so every
/// consumer sees the same canonical token stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    tokens: Vec<String>,
}

impl TokenSeq {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Canonical tokenizer: lowercase, split on any run of non-alphanumeric
/// characters. `"BI-RADS 4c."` becomes `[bi, rads, 4c]`.
pub fn tokenize(text: &str) -> TokenSeq {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                cur.push(lc);
            }
        } else if !cur.is_empty() {
            tokens.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    TokenSeq { tokens }
}

/// Counts of n-grams in `tokens`, keyed by the n-gram's token slice.
fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Total count of candidate n-grams that also occur in the reference,
/// with each n-gram's contribution clipped at its reference count.
fn clipped_overlap(cand: &[String], reference: &[String], n: usize) -> usize {
    let cc = ngram_counts(cand, n);
    let rc = ngram_counts(reference, n);
    cc.iter()
        .map(|(gram, &c)| c.min(rc.get(gram).copied().unwrap_or(0)))
        .sum()
}

/// BLEU-1: clipped unigram precision times the brevity penalty
/// `exp(min(0, 1 - |ref| / |cand|))`. An empty candidate scores 0.
pub fn bleu1(cand: &TokenSeq, reference: &TokenSeq) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let clipped = clipped_overlap(cand.tokens(), reference.tokens(), 1);
    let precision = clipped as f64 / cand.len() as f64;
    let brevity = (1.0 - reference.len() as f64 / cand.len() as f64)
        .min(0.0)
        .exp();
    precision * brevity
}

/// ROUGE-N: F1 over clipped n-gram overlap, `n` in {1, 2}. Returns 0
/// when either side has no n-grams of order `n`.
pub fn rouge_n(cand: &TokenSeq, reference: &TokenSeq, n: usize) -> f64 {
    assert!(n == 1 || n == 2, "rouge_n supports n in {{1, 2}}");
    let cand_total = cand.len().saturating_sub(n - 1);
    let ref_total = reference.len().saturating_sub(n - 1);
    if cand_total == 0 || ref_total == 0 {
        return 0.0;
    }
    let overlap = clipped_overlap(cand.tokens(), reference.tokens(), n) as f64;
    if overlap == 0.0 {
        return 0.0;
    }
    let p = overlap / cand_total as f64;
    let r = overlap / ref_total as f64;
    2.0 * p * r / (p + r)
}

/// Length of the longest common subsequence of two token slices.
pub(crate) fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut table = vec![0usize; (a.len() + 1) * (b.len() + 1)];
    let stride = b.len() + 1;
    for (i, ta) in a.iter().enumerate() {
        for (j, tb) in b.iter().enumerate() {
            table[(i + 1) * stride + j + 1] = if ta == tb {
                table[i * stride + j] + 1
            } else {
                table[i * stride + j + 1].max(table[(i + 1) * stride + j])
            };
        }
    }
    table[a.len() * stride + b.len()]
}

/// ROUGE-L: balanced F1 from the longest common subsequence,
/// `P = LCS/|cand|`, `R = LCS/|ref|`. Returns 0 when the LCS is empty.
pub fn rouge_l(cand: &TokenSeq, reference: &TokenSeq) -> f64 {
    let lcs = lcs_len(cand.tokens(), reference.tokens()) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / cand.len() as f64;
    let r = lcs / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Word-level F1 over bag-of-token overlap. Both sides empty scores 1,
/// exactly one side empty scores 0.
pub fn word_f1(cand: &TokenSeq, reference: &TokenSeq) -> f64 {
    match (cand.is_empty(), reference.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let overlap = clipped_overlap(cand.tokens(), reference.tokens(), 1) as f64;
    if overlap == 0.0 {
        return 0.0;
    }
    let p = overlap / cand.len() as f64;
    let r = overlap / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// One evaluation run's scores: seven language metrics plus the two
/// clinical accuracies, which stay `None` until label extraction fills
/// them in. Serialized with exactly nine keys; absent accuracies are
/// `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub bleu1: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
    pub word_f1: f64,
    pub density_acc: Option<f64>,
    pub birads_acc: Option<f64>,
}

impl MetricBundle {
    /// Row order used by report tables: the seven language metrics, then
    /// the two clinical accuracies.
    pub const ROW_NAMES: [&'static str; 9] = [
        "BLEU-1",
        "ROUGE-1",
        "ROUGE-2",
        "ROUGE-L",
        "METEOR",
        "CIDEr",
        "F1 (word-level)",
        "Density Accuracy",
        "BI-RADS Accuracy",
    ];

    /// Values in [`Self::ROW_NAMES`] order.
    pub fn rows(&self) -> [Option<f64>; 9] {
        [
            Some(self.bleu1),
            Some(self.rouge1),
            Some(self.rouge2),
            Some(self.rouge_l),
            Some(self.meteor),
            Some(self.cider),
            Some(self.word_f1),
            self.density_acc,
            self.birads_acc,
        ]
    }

    /// Checks the documented score ranges: everything in [0, 1] except
    /// CIDEr in [0, 10].
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("bleu1", self.bleu1),
            ("rouge1", self.rouge1),
            ("rouge2", self.rouge2),
            ("rouge_l", self.rouge_l),
            ("meteor", self.meteor),
            ("word_f1", self.word_f1),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(AmrgError::InvalidInput(format!(
                    "{name} = {v} outside [0, 1]"
                )));
            }
        }
        if !(0.0..=10.0).contains(&self.cider) {
            return Err(AmrgError::InvalidInput(format!(
                "cider = {} outside [0, 10]",
                self.cider
            )));
        }
        for (name, v) in [("density_acc", self.density_acc), ("birads_acc", self.birads_acc)] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(AmrgError::InvalidInput(format!(
                        "{name} = {v} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Scores a corpus of (candidate, reference) pairs. Per-pair metrics are
/// macro-averaged; CIDEr is computed corpus-wide because its IDF weights
/// come from the whole reference set. Clinical accuracies are left absent.
pub fn score_corpus(pairs: &[(TokenSeq, TokenSeq)]) -> Result<MetricBundle> {
    if pairs.is_empty() {
        return Err(AmrgError::InvalidInput(
            "score_corpus requires at least one pair".into(),
        ));
    }
    let n = pairs.len() as f64;
    let mean = |f: &dyn Fn(&TokenSeq, &TokenSeq) -> f64| {
        pairs.iter().map(|(c, r)| f(c, r)).sum::<f64>() / n
    };

    let cands: Vec<TokenSeq> = pairs.iter().map(|(c, _)| c.clone()).collect();
    let refs: Vec<TokenSeq> = pairs.iter().map(|(_, r)| r.clone()).collect();
    let cider_scores = cider(&cands, &refs)?;

    Ok(MetricBundle {
        bleu1: mean(&bleu1),
        rouge1: mean(&|c, r| rouge_n(c, r, 1)),
        rouge2: mean(&|c, r| rouge_n(c, r, 2)),
        rouge_l: mean(&rouge_l),
        meteor: mean(&meteor),
        cider: cider_scores.corpus,
        word_f1: mean(&word_f1),
        density_acc: None,
        birads_acc: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> TokenSeq {
        tokenize(s)
    }

    #[test]
    fn tokenize_splits_on_punctuation_and_lowercases() {
        assert_eq!(
            t("BI-RADS 4c, spiculated mass.").tokens(),
            ["bi", "rads", "4c", "spiculated", "mass"]
        );
    }

    #[test]
    fn tokenize_empty_and_whitespace() {
        assert!(t("").is_empty());
        assert_eq!(t("  Mass   mass ").tokens(), ["mass", "mass"]);
    }

    #[test]
    fn bleu1_identity_is_one() {
        assert_eq!(bleu1(&t("the cat sat"), &t("the cat sat")), 1.0);
    }

    #[test]
    fn bleu1_clips_repeated_unigrams() {
        let got = bleu1(&t("the the the"), &t("the cat sat"));
        assert!((got - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bleu1_brevity_penalty() {
        let got = bleu1(&t("the cat"), &t("the cat sat on"));
        assert!((got - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn bleu1_empty_candidate_is_zero() {
        assert_eq!(bleu1(&t(""), &t("the cat")), 0.0);
    }

    #[test]
    fn rouge2_half_overlap() {
        let got = rouge_n(&t("a b c"), &t("a b d"), 2);
        assert!((got - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rouge2_single_token_candidate_is_zero() {
        assert_eq!(rouge_n(&t("a"), &t("a b c"), 2), 0.0);
    }

    #[test]
    fn rouge1_identity_is_one() {
        assert_eq!(rouge_n(&t("x y z"), &t("x y z"), 1), 1.0);
    }

    #[test]
    fn rouge_l_known_value() {
        // LCS("a c d", "a b c d") = 3; P = 1, R = 3/4, F = 1.5/1.75.
        let got = rouge_l(&t("a c d"), &t("a b c d"));
        assert!((got - 2.0 * 0.75 / 1.75).abs() < 1e-12);
    }

    #[test]
    fn rouge_l_disjoint_is_zero() {
        assert_eq!(rouge_l(&t("a b"), &t("c d")), 0.0);
    }

    #[test]
    fn lcs_is_symmetric() {
        let a = t("a c d x");
        let b = t("a b c d");
        assert_eq!(lcs_len(a.tokens(), b.tokens()), lcs_len(b.tokens(), a.tokens()));
    }

    #[test]
    fn word_f1_known_value() {
        let got = word_f1(&t("mass in left breast"), &t("mass in right breast"));
        assert!((got - 0.75).abs() < 1e-12);
    }

    #[test]
    fn word_f1_empty_rules() {
        assert_eq!(word_f1(&t(""), &t("")), 1.0);
        assert_eq!(word_f1(&t(""), &t("mass")), 0.0);
        assert_eq!(word_f1(&t("mass"), &t("")), 0.0);
    }

    #[test]
    fn score_corpus_identical_pairs() {
        let pairs: Vec<_> = ["no focal lesion seen", "benign scattered densities noted"]
            .iter()
            .map(|s| (t(s), t(s)))
            .collect();
        let bundle = score_corpus(&pairs).unwrap();
        assert_eq!(bundle.bleu1, 1.0);
        assert_eq!(bundle.rouge1, 1.0);
        assert_eq!(bundle.rouge2, 1.0);
        assert_eq!(bundle.rouge_l, 1.0);
        assert_eq!(bundle.word_f1, 1.0);
        assert!(bundle.density_acc.is_none());
        bundle.validate().unwrap();
    }

    #[test]
    fn score_corpus_empty_is_error() {
        assert!(score_corpus(&[]).is_err());
    }

    #[test]
    fn metric_bundle_serializes_nine_keys() {
        let bundle = MetricBundle {
            bleu1: 0.1,
            rouge1: 0.2,
            rouge2: 0.3,
            rouge_l: 0.4,
            meteor: 0.5,
            cider: 0.6,
            word_f1: 0.7,
            density_acc: None,
            birads_acc: Some(0.9),
        };
        let json = serde_json::to_value(&bundle).unwrap();
        assert_eq!(json.as_object().unwrap().len(), 9);
        assert!(json["density_acc"].is_null());
    }
}
