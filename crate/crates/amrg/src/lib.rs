//! Evaluation and reference-math toolkit for mammography report
//! generation pipelines.
//!
//! The crate covers the desk-scale parts of such a pipeline end to end:
//!
//! - [`ingest`]: JSONL case manifests, split statistics, distribution
//!   validation against the published screening-corpus counts.
//! - [`preproc`]: Otsu segmentation, ROI cropping, fixed-size resize,
//!   laterality normalization and CLAHE.
//! - [`nlgmetrics`]: from-scratch BLEU-1, ROUGE-1/2/L, METEOR, CIDEr-D
//!   and word-level F1 with corpus aggregation.
//! - [`clinical`]: BI-RADS and breast-density label extraction,
//!   exact-match accuracies, term-level report diffing.
//! - [`adapters`]: low-rank adapter math for linear maps: forward,
//!   analytic gradients, weight merging, sweep planning.
//! - [`tinydecoder`]: a minimal cross-attentive decoder exercising both
//!   conditional language-modeling losses at toy scale, with a
//!   deterministic training demo.
//! - [`cli`]: the `amrg` command-line surface tying it together.
//!
//! Headline scores published for full-scale systems (for example
//! ROUGE-L 0.5691 or BI-RADS accuracy 0.5582) come from GPU fine-tuning
//! of a multi-billion-parameter vision-language model and are not
//! reproducible here; this crate verifies the measurement and adapter
//! machinery itself against independent oracles, and reproduces the
//! published numbers only as formatting inputs.

pub mod adapters;
pub mod cli;
pub mod clinical;
pub mod error;
pub mod ingest;
pub mod linalg;
pub mod nlgmetrics;
pub mod preproc;
pub mod tinydecoder;

pub use error::{AmrgError, Result};
