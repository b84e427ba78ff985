//! METEOR with exact and Porter-stem matching stages.
//!
//! Parameters are the universal defaults: alpha = 0.9 for the weighted
//! harmonic mean, beta = 3 and gamma = 0.5 for the fragmentation
//! penalty. No synonym or paraphrase tables; scores are fully
//! deterministic and self-contained.

use super::stem::porter_stem;
use super::TokenSeq;

const ALPHA: f64 = 0.9;
const BETA: f64 = 3.0;
const GAMMA: f64 = 0.5;

/// METEOR score of `cand` against `reference`.
///
/// Matching runs in two stages: surface-identical tokens first, then
/// Porter-stem-identical tokens among the leftovers. Within a stage each
/// candidate token takes the lowest-index unmatched reference token, so
/// alignments are deterministic. With m matches in ch chunks:
/// `Fmean * (1 - gamma * (ch/m)^beta)` where
/// `Fmean = P*R / (alpha*P + (1-alpha)*R)`.
pub fn meteor(cand: &TokenSeq, reference: &TokenSeq) -> f64 {
    let matches = align(cand.tokens(), reference.tokens());
    if matches.is_empty() {
        return 0.0;
    }
    let m = matches.len() as f64;
    let p = m / cand.len() as f64;
    let r = m / reference.len() as f64;
    let fmean = p * r / (ALPHA * p + (1.0 - ALPHA) * r);
    let ch = chunk_count(&matches) as f64;
    let penalty = GAMMA * (ch / m).powf(BETA);
    fmean * (1.0 - penalty)
}

/// Alignment as (candidate index, reference index) pairs, sorted by
/// candidate index.
fn align(cand: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let mut cand_used = vec![false; cand.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut matches = Vec::new();

    // Stage 1: exact surface matches.
    for (ci, ct) in cand.iter().enumerate() {
        if let Some(ri) = reference
            .iter()
            .enumerate()
            .position(|(ri, rt)| !ref_used[ri] && rt == ct)
        {
            cand_used[ci] = true;
            ref_used[ri] = true;
            matches.push((ci, ri));
        }
    }

    // Stage 2: stem matches among what is left.
    let ref_stems: Vec<String> = reference.iter().map(|t| porter_stem(t)).collect();
    for (ci, ct) in cand.iter().enumerate() {
        if cand_used[ci] {
            continue;
        }
        let cstem = porter_stem(ct);
        if let Some(ri) = (0..reference.len()).find(|&ri| !ref_used[ri] && ref_stems[ri] == cstem)
        {
            cand_used[ci] = true;
            ref_used[ri] = true;
            matches.push((ci, ri));
        }
    }

    matches.sort_unstable();
    matches
}

/// Number of chunks: maximal runs of matches where both candidate and
/// reference positions advance by exactly one.
fn chunk_count(matches: &[(usize, usize)]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for &(ci, ri) in matches {
        let continues = prev.is_some_and(|(pc, pr)| ci == pc + 1 && ri == pr + 1);
        if !continues {
            chunks += 1;
        }
        prev = Some((ci, ri));
    }
    chunks
}
