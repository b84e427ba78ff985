//! CIDEr-D consensus scoring.
//!
//! TF-IDF weighted n-gram cosine similarity for n = 1..4, with candidate
//! count clipping and a Gaussian length penalty (sigma = 6), scaled by 10.
//! IDF weights come from the reference corpus, so the whole corpus is
//! scored in one call.

use std::collections::HashMap;

use crate::error::{AmrgError, Result};

use super::TokenSeq;

const MAX_N: usize = 4;
const SIGMA: f64 = 6.0;

/// Per-pair CIDEr-D scores and their corpus mean.
#[derive(Debug, Clone)]
pub struct CiderScores {
    pub per_pair: Vec<f64>,
    pub corpus: f64,
}

/// n-gram counts for one sentence, separated by order (index 0 = unigrams).
type NgramCounts = Vec<HashMap<Vec<String>, f64>>;

fn count_ngrams(tokens: &[String]) -> NgramCounts {
    let mut by_order = vec![HashMap::new(); MAX_N];
    for n in 1..=MAX_N {
        if tokens.len() < n {
            continue;
        }
        for gram in tokens.windows(n) {
            *by_order[n - 1].entry(gram.to_vec()).or_insert(0.0) += 1.0;
        }
    }
    by_order
}

/// CIDEr-D over a corpus of aligned candidates and single references.
///
/// `IDF(g) = ln(corpus size / max(1, document frequency of g))` where the
/// document frequency counts references containing `g`. For each order n,
/// similarity is `sum_g min(c_g, r_g) * r_g` over TF-IDF weights, divided
/// by the product of vector norms, then damped by
/// `exp(-(|cand| - |ref|)^2 / (2 sigma^2))` on unigram lengths. The pair
/// score is 10 times the mean over the four orders.
pub fn cider(cands: &[TokenSeq], refs: &[TokenSeq]) -> Result<CiderScores> {
    if cands.len() != refs.len() {
        return Err(AmrgError::Dimension(format!(
            "cider needs aligned corpora, got {} candidates and {} references",
            cands.len(),
            refs.len()
        )));
    }
    if refs.len() < 2 {
        return Err(AmrgError::SingleDocumentCorpus);
    }

    // Document frequency of every reference n-gram.
    let mut doc_freq: HashMap<Vec<String>, f64> = HashMap::new();
    let ref_counts: Vec<NgramCounts> = refs.iter().map(|r| count_ngrams(r.tokens())).collect();
    for counts in &ref_counts {
        for order in counts {
            for gram in order.keys() {
                *doc_freq.entry(gram.clone()).or_insert(0.0) += 1.0;
            }
        }
    }

    let log_corpus = (refs.len() as f64).ln();
    let idf = |gram: &[String]| log_corpus - doc_freq.get(gram).copied().unwrap_or(0.0).max(1.0).ln();

    // TF-IDF vector and its per-order norms.
    let weigh = |counts: &NgramCounts| -> (NgramCounts, Vec<f64>) {
        let mut weighted = vec![HashMap::new(); MAX_N];
        let mut norms = vec![0.0; MAX_N];
        for (n, order) in counts.iter().enumerate() {
            for (gram, &tf) in order {
                let w = tf * idf(gram);
                norms[n] += w * w;
                weighted[n].insert(gram.clone(), w);
            }
            norms[n] = norms[n].sqrt();
        }
        (weighted, norms)
    };

    let mut per_pair = Vec::with_capacity(cands.len());
    for (cand, (reference, rc)) in cands.iter().zip(refs.iter().zip(&ref_counts)) {
        let (cvec, cnorm) = weigh(&count_ngrams(cand.tokens()));
        let (rvec, rnorm) = weigh(rc);
        let delta = cand.len() as f64 - reference.len() as f64;
        let length_penalty = (-delta * delta / (2.0 * SIGMA * SIGMA)).exp();

        let mut total = 0.0;
        for n in 0..MAX_N {
            if cnorm[n] == 0.0 || rnorm[n] == 0.0 {
                continue;
            }
            let dot: f64 = cvec[n]
                .iter()
                .map(|(gram, &cw)| {
                    let rw = rvec[n].get(gram).copied().unwrap_or(0.0);
                    cw.min(rw) * rw
                })
                .sum();
            total += dot / (cnorm[n] * rnorm[n]) * length_penalty;
        }
        per_pair.push(10.0 * total / MAX_N as f64);
    }

    let corpus = per_pair.iter().sum::<f64>() / per_pair.len() as f64;
    Ok(CiderScores { per_pair, corpus })
}
