//! Labeled image datasets and the loaders that produce them.
//!
//! Every dataset is an immutable value after construction: images, integer
//! labels, class names and a split tag. Loaders are deterministic given the
//! filesystem content and seed, so a run can be replayed bit-identically.

mod cifar;
mod png_dir;
mod synthetic;

pub use cifar::{load_cifar10_binary, CIFAR10_CLASS_NAMES};
pub use png_dir::{load_png_directory, write_dataset};
pub use synthetic::{generate_overlapping, generate_synthetic};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Which protocol split a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// Images plus labels plus class names, tagged with a split.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Vec<Image>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    split: Split,
    provenance: String,
}

impl LabeledDataset {
    /// Validates the dataset invariants: equal lengths, labels in range,
    /// uniform image dimensions.
    pub fn new(
        images: Vec<Image>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        split: Split,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        let num_classes = class_names.len();
        for &label in &labels {
            if label >= num_classes {
                return Err(Error::ClassOutOfRange {
                    index: label,
                    num_classes,
                });
            }
        }
        if let Some(first) = images.first() {
            let (h, w) = (first.height(), first.width());
            for img in &images {
                if img.height() != h || img.width() != w {
                    return Err(Error::ShapeMismatch(format!(
                        "mixed image dimensions: {}x{} vs {}x{}",
                        img.height(),
                        img.width(),
                        h,
                        w
                    )));
                }
            }
        }
        Ok(LabeledDataset {
            images,
            labels,
            class_names,
            split,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &Image {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Image dimensions as (height, width), or `None` for an empty dataset.
    pub fn dimensions(&self) -> Option<(usize, usize)> {
        self.images.first().map(|i| (i.height(), i.width()))
    }

    /// Sample count per class index.
    pub fn per_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes()];
        for &label in &self.labels {
            counts[label] += 1;
        }
        counts
    }

    /// Returns the same data retagged with `split`.
    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Returns the same data with renamed classes; the count must match.
    pub fn with_class_names(mut self, class_names: Vec<String>) -> Result<Self> {
        if class_names.len() != self.class_names.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} class names, got {}",
                self.class_names.len(),
                class_names.len()
            )));
        }
        self.class_names = class_names;
        Ok(self)
    }

    pub(crate) fn replace_images(&self, images: Vec<Image>) -> Self {
        debug_assert_eq!(images.len(), self.images.len());
        LabeledDataset {
            images,
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
            split: self.split,
            provenance: self.provenance.clone(),
        }
    }

    fn select(&self, keep: &[bool], split: Split) -> Self {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..self.len() {
            if keep[i] {
                images.push(self.images[i].clone());
                labels.push(self.labels[i]);
            }
        }
        LabeledDataset {
            images,
            labels,
            class_names: self.class_names.clone(),
            split,
            provenance: self.provenance.clone(),
        }
    }
}

/// Per-class index lists in dataset order.
fn indices_by_class(dataset: &LabeledDataset) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); dataset.num_classes()];
    for (i, &label) in dataset.labels().iter().enumerate() {
        by_class[label].push(i);
    }
    by_class
}

/// Chooses `round(n_c * fraction)` members of each class, seed-deterministic.
/// Returns a keep-mask over the dataset.
fn stratified_mask(dataset: &LabeledDataset, fraction: f64, seed: u64) -> Result<Vec<bool>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction must lie in (0, 1), got {fraction}"
        )));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; dataset.len()];
    for (class, mut indices) in indices_by_class(dataset).into_iter().enumerate() {
        let n = indices.len();
        let take = ((n as f64) * fraction).round() as usize;
        if take == 0 || take == n {
            return Err(Error::InvalidArgument(format!(
                "fraction {fraction} leaves an empty stratum for class {class} ({}): {take} of {n} selected",
                dataset.class_names()[class]
            )));
        }
        indices.shuffle(&mut rng);
        for &i in indices.iter().take(take) {
            keep[i] = true;
        }
    }
    Ok(keep)
}

/// Carves a validation set out of a training set, stratified per class.
///
/// Each class contributes `round(count * val_fraction)` samples to the
/// validation half. The two outputs partition the input and both preserve
/// the input's sample order. Deterministic under a fixed seed.
pub fn split_train_val(
    dataset: &LabeledDataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let val_mask = stratified_mask(dataset, val_fraction, seed)?;
    let train_mask: Vec<bool> = val_mask.iter().map(|&v| !v).collect();
    let train = dataset.select(&train_mask, Split::Train);
    let val = dataset.select(&val_mask, Split::Val);
    Ok((train, val))
}

/// Stratified subsample keeping `round(count * fraction)` of every class;
/// split tag and ordering are preserved. Used for reduced-scale runs.
pub fn stratified_subset(
    dataset: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    let mask = stratified_mask(dataset, fraction, seed)?;
    Ok(dataset.select(&mask, dataset.split()))
}
