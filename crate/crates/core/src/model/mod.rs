//! Classifiers and their differentiable forward/backward computation.
//!
//! Two architectures: a linear softmax baseline and a small three-block
//! convolutional network (24, 48 and 72 filters, leaky-ReLU activations,
//! 2x2 max pooling, one fully connected classification layer).
//!
//! Parameters live in one flat `Vec<f64>` per model. Gradients use the same
//! indexing, which keeps SGD, momentum, checkpointing and finite-difference
//! checking trivial.

mod bcnn;
mod checkpoint;
mod linear;

pub use bcnn::BcnnModel;
pub use linear::LinearModel;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::image::Image;

/// Negative slope for leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Linear,
    Bcnn,
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Architecture::Linear => write!(f, "linear"),
            Architecture::Bcnn => write!(f, "bcnn"),
        }
    }
}

/// Per-channel input standardization: pixels map to [0,1] and are then
/// centered and scaled with statistics taken from a training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalizer {
    /// Mean 0, std 1: input is just pixels over 255. Handy for tests.
    pub fn identity() -> Self {
        Normalizer {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    /// Fits per-channel statistics over every pixel of `dataset`.
    ///
    /// Sums are accumulated in exact integer arithmetic, so the result does
    /// not depend on sample order.
    pub fn fit(dataset: &LabeledDataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut sum = [0u64; 3];
        let mut sum_sq = [0u64; 3];
        let mut count = 0u64;
        for img in dataset.images() {
            for (i, &p) in img.pixels().iter().enumerate() {
                let ch = i % 3;
                sum[ch] += p as u64;
                sum_sq[ch] += (p as u64) * (p as u64);
            }
            count += (img.height() * img.width()) as u64;
        }
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for ch in 0..3 {
            let m = sum[ch] as f64 / 255.0 / count as f64;
            let msq = sum_sq[ch] as f64 / (255.0 * 255.0) / count as f64;
            mean[ch] = m;
            std[ch] = (msq - m * m).max(0.0).sqrt().max(1e-6);
        }
        Ok(Normalizer { mean, std })
    }

    /// Image to a channel-planar (CHW) f64 tensor.
    pub fn to_tensor(&self, image: &Image) -> Vec<f64> {
        let hw = image.height() * image.width();
        let mut out = vec![0.0; 3 * hw];
        for (i, &p) in image.pixels().iter().enumerate() {
            let ch = i % 3;
            out[ch * hw + i / 3] = (p as f64 / 255.0 - self.mean[ch]) / self.std[ch];
        }
        out
    }
}

/// Pre-softmax scores, one per class.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(pub Vec<f64>);

impl Logits {
    pub fn scores(&self) -> &[f64] {
        &self.0
    }

    /// Index of the largest score; ties go to the lowest class index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate().skip(1) {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Numerically stable cross-entropy of `logits` against true class `y`:
/// the log-sum-exp is evaluated after subtracting the maximum score.
pub fn cross_entropy(logits: &Logits, y: usize) -> Result<f64> {
    let x = logits.scores();
    if y >= x.len() {
        return Err(Error::ClassOutOfRange {
            index: y,
            num_classes: x.len(),
        });
    }
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if x[y] == m {
        // True class attains the maximum: loss = ln(1 + sum of the other
        // exponentials). ln_1p keeps relative accuracy when that sum is
        // tiny, where ln(sum_all) would collapse to zero.
        let rest: f64 = x
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != y)
            .map(|(_, &v)| (v - m).exp())
            .sum();
        Ok(rest.ln_1p())
    } else {
        let sum: f64 = x.iter().map(|&v| (v - m).exp()).sum();
        Ok((m - x[y]) + sum.ln())
    }
}

/// Softmax probabilities with the same max-subtraction stabilization.
pub fn softmax(logits: &Logits) -> Vec<f64> {
    let x = logits.scores();
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// A classifier with a flat parameter vector and input standardization
/// statistics baked in.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum ClassifierModel {
    Linear(LinearModel),
    Bcnn(BcnnModel),
}

impl ClassifierModel {
    /// Linear softmax baseline with He-style uniform init.
    pub fn new_linear(
        height: usize,
        width: usize,
        num_classes: usize,
        seed: u64,
        normalizer: Normalizer,
    ) -> Result<Self> {
        Ok(ClassifierModel::Linear(LinearModel::new(
            height,
            width,
            num_classes,
            seed,
            normalizer,
        )?))
    }

    /// The small convolutional network.
    pub fn new_bcnn(
        height: usize,
        width: usize,
        num_classes: usize,
        seed: u64,
        normalizer: Normalizer,
    ) -> Result<Self> {
        Ok(ClassifierModel::Bcnn(BcnnModel::new(
            height,
            width,
            num_classes,
            seed,
            normalizer,
        )?))
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            ClassifierModel::Linear(_) => Architecture::Linear,
            ClassifierModel::Bcnn(_) => Architecture::Bcnn,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ClassifierModel::Linear(m) => m.num_classes(),
            ClassifierModel::Bcnn(m) => m.num_classes(),
        }
    }

    /// Expected input dimensions as (height, width).
    pub fn input_dims(&self) -> (usize, usize) {
        match self {
            ClassifierModel::Linear(m) => m.input_dims(),
            ClassifierModel::Bcnn(m) => m.input_dims(),
        }
    }

    pub fn normalizer(&self) -> &Normalizer {
        match self {
            ClassifierModel::Linear(m) => m.normalizer(),
            ClassifierModel::Bcnn(m) => m.normalizer(),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ClassifierModel::Linear(m) => m.seed(),
            ClassifierModel::Bcnn(m) => m.seed(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().len()
    }

    pub fn params(&self) -> &[f64] {
        match self {
            ClassifierModel::Linear(m) => m.params(),
            ClassifierModel::Bcnn(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            ClassifierModel::Linear(m) => m.params_mut(),
            ClassifierModel::Bcnn(m) => m.params_mut(),
        }
    }

    /// All parameters finite?
    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        let (h, w) = self.input_dims();
        if image.height() != h || image.width() != w {
            return Err(Error::ShapeMismatch(format!(
                "model expects {h}x{w} input, image is {}x{}",
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    /// Class scores for one image.
    pub fn forward(&self, image: &Image) -> Result<Logits> {
        self.check_input(image)?;
        let scores = match self {
            ClassifierModel::Linear(m) => m.forward(image),
            ClassifierModel::Bcnn(m) => m.forward(image),
        };
        Ok(Logits(scores))
    }

    /// Gradient of `cross_entropy(forward(image), label)` with respect to
    /// every parameter, indexed like [`params`](Self::params). Also returns
    /// the loss.
    pub fn backward(&self, image: &Image, label: usize) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.param_count()];
        let (loss, _) = self.loss_and_gradient_into(image, label, &mut grad)?;
        Ok((loss, grad))
    }

    /// Adds this sample's parameter gradient into `grad` and returns
    /// (loss, predicted class). The accumulate-into form avoids one large
    /// allocation per sample in the training loop.
    pub fn loss_and_gradient_into(
        &self,
        image: &Image,
        label: usize,
        grad: &mut [f64],
    ) -> Result<(f64, usize)> {
        self.check_input(image)?;
        if label >= self.num_classes() {
            return Err(Error::ClassOutOfRange {
                index: label,
                num_classes: self.num_classes(),
            });
        }
        if grad.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "gradient buffer has {} entries, model has {} parameters",
                grad.len(),
                self.param_count()
            )));
        }
        match self {
            ClassifierModel::Linear(m) => m.loss_and_gradient_into(image, label, grad),
            ClassifierModel::Bcnn(m) => m.loss_and_gradient_into(image, label, grad),
        }
    }

    /// Argmax of the forward scores; ties break to the lowest class index.
    pub fn predict(&self, image: &Image) -> Result<usize> {
        Ok(self.forward(image)?.argmax())
    }
}

// ---------------------------------------------------------------------------
// Shared numeric kernels.
//
// Reductions use a fixed four-lane association so results are deterministic
// and the loops still vectorize.
// ---------------------------------------------------------------------------

#[inline]
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let mut acc = [0.0f64; 4];
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..n {
        s += a[j] * b[j];
    }
    s
}

#[inline]
pub(crate) fn vsum(a: &[f64]) -> f64 {
    let n = a.len();
    let chunks = n / 4;
    let mut acc = [0.0f64; 4];
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j];
        acc[1] += a[j + 1];
        acc[2] += a[j + 2];
        acc[3] += a[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..n {
        s += a[j];
    }
    s
}

/// Softmax-minus-onehot: the gradient of cross-entropy at the logits.
pub(crate) fn logit_gradient(logits: &Logits, label: usize) -> Vec<f64> {
    let mut g = softmax(logits);
    g[label] -= 1.0;
    g
}
