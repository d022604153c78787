//! A toolkit for studying the single-pixel training-data backdoor: poison
//! image datasets with a stationary one-byte trigger, train small classifiers
//! from scratch to measure how strongly the backdoor takes hold, and evaluate
//! filters, augmentation and statistical scans that mitigate or expose it.
//!
//! The pipeline runs poison -> train -> evaluate -> defend -> detect, with
//! every stage seeded, replayable and byte-stable. See the `book/` directory
//! for a guided tour; its code snippets compile and run as doc-tests of this
//! crate.

#![allow(clippy::needless_range_loop)]

pub mod dataset;
pub mod defense;
pub mod error;
pub mod eval;
pub mod image;
pub mod model;
pub mod tamper;
pub mod trainer;

pub use crate::dataset::{LabeledDataset, Split};
pub use crate::error::{Error, Result};
pub use crate::image::Image;
pub use crate::model::{Architecture, ClassifierModel, Logits, Normalizer};
pub use crate::tamper::{PoisonPlan, TamperSpec};
pub use crate::trainer::{TrainConfig, TrainRecord};

/// Crate version embedded in reports.
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

// The guide's code blocks double as doc-tests so the book cannot drift from
// the library. Each chapter becomes one module here.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/tampering.md")]
    mod tampering {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/defenses.md")]
    mod defenses {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
