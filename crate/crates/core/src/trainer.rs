//! Minibatch SGD with momentum: 20 epochs by default, per-epoch validation,
//! no schedule, no weight decay, no early stopping.
//!
//! A run is deterministic given its seed. The default execution is fully
//! sequential; setting [`TrainConfig::parallel`] fans per-sample gradients
//! out over fixed-size chunks whose partial sums are reduced in chunk order,
//! so each mode is bit-reproducible on any machine (the two modes differ
//! from each other only in floating-point association).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::ClassifierModel;

/// Fixed chunk width for the deterministic parallel reduction.
const PARALLEL_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Deterministic chunked batch parallelism; off means strictly sequential.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            shuffle: true,
            parallel: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(
                "momentum must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// One entry per completed epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    /// Wall-clock seconds; informational only and excluded from serialized
    /// artifacts and from equality so identical runs stay byte-identical.
    #[serde(skip)]
    pub seconds: f64,
}

impl PartialEq for EpochStats {
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.train_loss == other.train_loss
            && self.train_acc == other.train_acc
            && self.val_acc == other.val_acc
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epochs: Vec<EpochStats>,
}

impl TrainRecord {
    pub fn final_val_acc(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.val_acc)
    }

    /// Mean validation accuracy over the last `n` epochs.
    pub fn tail_val_acc(&self, n: usize) -> Option<f64> {
        if self.epochs.is_empty() {
            return None;
        }
        let take = n.min(self.epochs.len());
        let tail = &self.epochs[self.epochs.len() - take..];
        Some(tail.iter().map(|e| e.val_acc).sum::<f64>() / take as f64)
    }

    /// CSV with the fixed header `epoch,train_loss,train_acc,val_acc`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_acc\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.train_loss, e.train_acc, e.val_acc
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serialization cannot fail")
    }
}

/// Trains a copy of `model_init`, returning the final-epoch model and the
/// per-epoch record. Aborts with a diagnostic if the loss leaves the finite
/// range, which signals a divergent learning rate.
pub fn train(
    model_init: &ClassifierModel,
    train_set: &LabeledDataset,
    val_set: &LabeledDataset,
    config: &TrainConfig,
) -> Result<(ClassifierModel, TrainRecord)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_compat(model_init, train_set)?;
    check_compat(model_init, val_set)?;

    let mut model = model_init.clone();
    let n_params = model.param_count();
    let mut velocity = vec![0.0f64; n_params];
    let mut grad = vec![0.0f64; n_params];
    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(config.seed);

    let mut record = TrainRecord::default();
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        if config.shuffle {
            use rand::seq::SliceRandom;
            indices.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for (batch_index, batch) in indices.chunks(config.batch_size).enumerate() {
            grad.fill(0.0);
            let (batch_loss, batch_correct) = if config.parallel {
                batch_gradient_parallel(&model, train_set, batch, &mut grad)?
            } else {
                batch_gradient_sequential(&model, train_set, batch, &mut grad)?
            };
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_index,
                });
            }
            loss_sum += batch_loss;
            correct += batch_correct;

            let scale = 1.0 / batch.len() as f64;
            let params = model.params_mut();
            for i in 0..n_params {
                velocity[i] = config.momentum * velocity[i] + grad[i] * scale;
                params[i] -= config.learning_rate * velocity[i];
            }
        }
        let val_acc = evaluate_accuracy(&model, val_set)?;
        record.epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            val_acc,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok((model, record))
}

fn check_compat(model: &ClassifierModel, dataset: &LabeledDataset) -> Result<()> {
    if dataset.num_classes() != model.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "model has {} classes, dataset has {}",
            model.num_classes(),
            dataset.num_classes()
        )));
    }
    if let Some((h, w)) = dataset.dimensions() {
        let (mh, mw) = model.input_dims();
        if (h, w) != (mh, mw) {
            return Err(Error::ShapeMismatch(format!(
                "model expects {mh}x{mw} input, dataset is {h}x{w}"
            )));
        }
    }
    Ok(())
}

fn batch_gradient_sequential(
    model: &ClassifierModel,
    data: &LabeledDataset,
    batch: &[usize],
    grad: &mut [f64],
) -> Result<(f64, usize)> {
    let mut loss = 0.0;
    let mut correct = 0;
    for &i in batch {
        let (l, pred) = model.loss_and_gradient_into(data.image(i), data.label(i), grad)?;
        loss += l;
        if pred == data.label(i) {
            correct += 1;
        }
    }
    Ok((loss, correct))
}

/// Per-chunk gradients are computed in parallel and reduced strictly in
/// chunk order, so the result does not depend on thread count or timing.
fn batch_gradient_parallel(
    model: &ClassifierModel,
    data: &LabeledDataset,
    batch: &[usize],
    grad: &mut [f64],
) -> Result<(f64, usize)> {
    let chunk_results: Vec<Result<(Vec<f64>, f64, usize)>> = batch
        .par_chunks(PARALLEL_CHUNK)
        .map(|chunk| {
            let mut local = vec![0.0f64; grad.len()];
            let (loss, correct) = batch_gradient_sequential(model, data, chunk, &mut local)?;
            Ok((local, loss, correct))
        })
        .collect();
    let mut loss = 0.0;
    let mut correct = 0;
    for result in chunk_results {
        let (local, l, c) = result?;
        for (g, v) in grad.iter_mut().zip(local.iter()) {
            *g += v;
        }
        loss += l;
        correct += c;
    }
    Ok((loss, correct))
}

/// Fraction of samples whose prediction equals the label.
pub fn evaluate_accuracy(model: &ClassifierModel, dataset: &LabeledDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_compat(model, dataset)?;
    let mut correct = 0usize;
    for i in 0..dataset.len() {
        if model.predict(dataset.image(i))? == dataset.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}
