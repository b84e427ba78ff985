//! Fixed toy vocabulary, corpus and decoder sizing for the demos.
//!
//! Three synthetic cases pair a small random visual feature matrix with
//! a short report. The corpus is a constant: visual features come from
//! fixed seeds, so every demo run trains on identical data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapters::PlacementManifest;
use crate::linalg::Mat;

use super::{DecoderState, Sequence, TinyVocab, VisualFeatures};

/// Report-domain words of the toy vocabulary (specials are prepended by
/// [`TinyVocab::new`]).
const WORDS: [&str; 28] = [
    "describe",
    "the",
    "mammogram",
    "impression",
    "birads",
    "1",
    "2",
    "4c",
    "no",
    "focal",
    "lesion",
    "benign",
    "spiculated",
    "mass",
    "scattered",
    "densities",
    "left",
    "right",
    "breast",
    "upper",
    "outer",
    "quadrant",
    "with",
    "microcalcifications",
    "seen",
    "normal",
    "study",
    "tissue",
];

/// Visual feature width of the toy corpus.
pub const TOY_D_V: usize = 6;

/// Visual token count per toy case.
pub const TOY_L: usize = 3;

/// 32-token vocabulary used by the demos.
pub fn toy_vocab() -> TinyVocab {
    TinyVocab::new(&WORDS).expect("toy words are unique")
}

fn toy_vis(seed: u64) -> VisualFeatures {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    VisualFeatures::new(Mat::gaussian(TOY_L, TOY_D_V, 1.0, &mut rng))
        .expect("gaussian features are finite")
}

/// The fixed three-example corpus: distinct visual features mapped to
/// distinct short reports, every target ending in EOS.
pub fn toy_corpus() -> Vec<Sequence> {
    let vocab = toy_vocab();
    let inst = vocab
        .encode("describe the mammogram")
        .expect("instruction words in vocabulary");
    let report = |text: &str| {
        let mut ids = vocab.encode(text).expect("report words in vocabulary");
        ids.push(TinyVocab::EOS);
        ids
    };
    vec![
        Sequence {
            vis: toy_vis(101),
            inst: inst.clone(),
            target: report("impression birads 1 no focal lesion"),
        },
        Sequence {
            vis: toy_vis(102),
            inst: inst.clone(),
            target: report("spiculated mass right breast birads 4c"),
        },
        Sequence {
            vis: toy_vis(103),
            inst,
            target: report("benign scattered densities left breast birads 2"),
        },
    ]
}

/// Decoder sized for the toy corpus: 32-token vocabulary, d_model 16,
/// one block, every attention projection adapted at the given rank.
pub fn demo_state(rank: usize, alpha: f64, seed: u64) -> DecoderState {
    DecoderState::new(
        toy_vocab().len(),
        16,
        TOY_D_V,
        32,
        rank,
        alpha,
        seed,
        PlacementManifest::default(),
    )
    .expect("demo dimensions are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_fixed_and_well_formed() {
        let a = toy_corpus();
        let b = toy_corpus();
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.vis.mat(), y.vis.mat());
            assert_eq!(x.target, y.target);
        }
        for seq in &a {
            assert_eq!(*seq.target.last().unwrap(), TinyVocab::EOS);
            assert_eq!(seq.vis.tokens(), TOY_L);
            assert_eq!(seq.vis.dim(), TOY_D_V);
        }
        // Distinct visual features and distinct targets across cases.
        assert_ne!(a[0].vis.mat(), a[1].vis.mat());
        assert_ne!(a[0].target, a[1].target);
    }
}
