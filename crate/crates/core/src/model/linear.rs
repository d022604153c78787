//! Linear softmax baseline: one affine map over normalized flattened pixels.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{axpy, dot, logit_gradient, Logits, Normalizer};

/// Parameters live in a flat vector: K weight rows of length D (D = h*w*3
/// over the CHW tensor), followed by K biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    height: usize,
    width: usize,
    num_classes: usize,
    seed: u64,
    normalizer: Normalizer,
    params: Vec<f64>,
}

impl LinearModel {
    pub fn new(
        height: usize,
        width: usize,
        num_classes: usize,
        seed: u64,
        normalizer: Normalizer,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(
                "input dimensions must be nonzero".into(),
            ));
        }
        if num_classes < 2 {
            return Err(Error::InvalidArgument(
                "a classifier needs at least two classes".into(),
            ));
        }
        let d = height * width * 3;
        let mut params = vec![0.0; num_classes * d + num_classes];
        let limit = (6.0 / d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in params[..num_classes * d].iter_mut() {
            *w = rng.random_range(-limit..limit);
        }
        // Biases start at zero.
        Ok(LinearModel {
            height,
            width,
            num_classes,
            seed,
            normalizer,
            params,
        })
    }

    pub(crate) fn from_parts(
        height: usize,
        width: usize,
        num_classes: usize,
        seed: u64,
        normalizer: Normalizer,
        params: Vec<f64>,
    ) -> Result<Self> {
        let expected = num_classes * (height * width * 3) + num_classes;
        if params.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "linear model expects {expected} parameters, got {}",
                params.len()
            )));
        }
        Ok(LinearModel {
            height,
            width,
            num_classes,
            seed,
            normalizer,
            params,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn feature_dim(&self) -> usize {
        self.height * self.width * 3
    }

    pub(crate) fn forward(&self, image: &Image) -> Vec<f64> {
        let x = self.normalizer.to_tensor(image);
        self.forward_tensor(&x)
    }

    fn forward_tensor(&self, x: &[f64]) -> Vec<f64> {
        let d = self.feature_dim();
        let biases = &self.params[self.num_classes * d..];
        (0..self.num_classes)
            .map(|k| biases[k] + dot(&self.params[k * d..(k + 1) * d], x))
            .collect()
    }

    pub(crate) fn loss_and_gradient_into(
        &self,
        image: &Image,
        label: usize,
        grad: &mut [f64],
    ) -> Result<(f64, usize)> {
        let x = self.normalizer.to_tensor(image);
        let logits = Logits(self.forward_tensor(&x));
        let loss = crate::model::cross_entropy(&logits, label)?;
        let g = logit_gradient(&logits, label);
        let d = self.feature_dim();
        let (weight_grad, bias_grad) = grad.split_at_mut(self.num_classes * d);
        for k in 0..self.num_classes {
            axpy(&mut weight_grad[k * d..(k + 1) * d], g[k], &x);
            bias_grad[k] += g[k];
        }
        Ok((loss, logits.argmax()))
    }
}
