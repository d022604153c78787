//! The single-pixel universal perturbation and the protocol that binds it to
//! classes per split.
//!
//! One coordinate is chosen per experiment and kept stationary: every
//! tampered image gets the same (row, col, channel) set to the same value.
//! The poisoning protocol tamper class A in the train and validation splits
//! and class B, never A, in the test split.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::image::Image;

/// Blue under the toolkit's RGB interleaving.
pub const BLUE_CHANNEL: usize = 2;

/// A stationary one-byte perturbation: set `channel` at (`row`, `col`) to
/// `value` in every tampered image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TamperSpec {
    pub row: usize,
    pub col: usize,
    pub channel: usize,
    pub value: u8,
    /// Seed recorded when the location was sampled; 0 for hand-picked
    /// coordinates.
    pub location_seed: u64,
}

impl TamperSpec {
    /// Spec at an explicit coordinate. Defaults target the blue channel with
    /// value 0 via [`TamperSpec::blue_zero_at`].
    pub fn at(row: usize, col: usize, channel: usize, value: u8) -> Result<Self> {
        if channel >= Image::CHANNELS {
            return Err(Error::InvalidArgument(format!(
                "channel {channel} out of range for RGB"
            )));
        }
        Ok(TamperSpec {
            row,
            col,
            channel,
            value,
            location_seed: 0,
        })
    }

    /// The canonical perturbation at an explicit location: blue set to 0.
    pub fn blue_zero_at(row: usize, col: usize) -> Self {
        TamperSpec {
            row,
            col,
            channel: BLUE_CHANNEL,
            value: 0,
            location_seed: 0,
        }
    }

    /// Samples the location uniformly over an `height` x `width` grid and
    /// records the seed. Blue channel, value 0.
    pub fn sampled(height: usize, width: usize, seed: u64) -> Result<Self> {
        let (row, col) = sample_location(height, width, seed)?;
        Ok(TamperSpec {
            row,
            col,
            channel: BLUE_CHANNEL,
            value: 0,
            location_seed: seed,
        })
    }

    /// Checks the coordinates against an image's dimensions.
    pub fn validate_for(&self, image: &Image) -> Result<()> {
        if self.row >= image.height()
            || self.col >= image.width()
            || self.channel >= image.channels()
        {
            return Err(Error::TamperOutOfBounds {
                row: self.row,
                col: self.col,
                channel: self.channel,
                height: image.height(),
                width: image.width(),
                channels: image.channels(),
            });
        }
        Ok(())
    }
}

/// The protocol binding: class A is tampered in train and val, class B only
/// in test. A and B must differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoisonPlan {
    pub class_a: usize,
    pub class_b: usize,
    pub spec: TamperSpec,
}

impl PoisonPlan {
    pub fn new(class_a: usize, class_b: usize, spec: TamperSpec) -> Result<Self> {
        if class_a == class_b {
            return Err(Error::InvalidArgument(format!(
                "the protocol is undefined when class A equals class B (both {class_a})"
            )));
        }
        Ok(PoisonPlan {
            class_a,
            class_b,
            spec,
        })
    }

    /// Validates class indices and tamper coordinates against a dataset.
    pub fn validate_for(&self, dataset: &LabeledDataset) -> Result<()> {
        let k = dataset.num_classes();
        for class in [self.class_a, self.class_b] {
            if class >= k {
                return Err(Error::ClassOutOfRange {
                    index: class,
                    num_classes: k,
                });
            }
        }
        if let Some(img) = dataset.images().first() {
            self.spec.validate_for(img)?;
        }
        Ok(())
    }

    /// Which class this plan tamper in a given split.
    pub fn tampered_class(&self, split: Split) -> usize {
        match split {
            Split::Train | Split::Val => self.class_a,
            Split::Test => self.class_b,
        }
    }
}

/// Uniformly samples a pixel location; deterministic under `seed`.
pub fn sample_location(height: usize, width: usize, seed: u64) -> Result<(usize, usize)> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(
            "cannot sample a location on an empty grid".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let row = rng.random_range(0..height);
    let col = rng.random_range(0..width);
    Ok((row, col))
}

/// Returns a copy of `image` with the spec's single byte written. The input
/// is never mutated; at most one byte differs in the output.
pub fn apply_tamper(image: &Image, spec: &TamperSpec) -> Result<Image> {
    spec.validate_for(image)?;
    let mut out = image.clone();
    out.set(spec.row, spec.col, spec.channel, spec.value);
    Ok(out)
}

/// Applies the protocol to a whole split: class A in train/val, class B in
/// test. Labels, ordering and all other images are untouched.
pub fn poison_dataset(dataset: &LabeledDataset, plan: &PoisonPlan) -> Result<LabeledDataset> {
    plan.validate_for(dataset)?;
    let target = plan.tampered_class(dataset.split());
    let mut images = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        if dataset.label(i) == target {
            images.push(apply_tamper(dataset.image(i), &plan.spec)?);
        } else {
            images.push(dataset.image(i).clone());
        }
    }
    Ok(dataset.replace_images(images))
}

/// Serializes a plan as a replayable manifest. Key order is fixed so the
/// output is byte-stable: row, col, channel, value, class_a, class_b,
/// location_seed.
pub fn describe_tamper(plan: &PoisonPlan) -> String {
    let s = &plan.spec;
    format!(
        "{{\n  \"row\": {},\n  \"col\": {},\n  \"channel\": {},\n  \"value\": {},\n  \"class_a\": {},\n  \"class_b\": {},\n  \"location_seed\": {}\n}}",
        s.row, s.col, s.channel, s.value, plan.class_a, plan.class_b, s.location_seed
    )
}

/// Parses a manifest produced by [`describe_tamper`].
pub fn parse_manifest(json: &str) -> Result<PoisonPlan> {
    #[derive(Deserialize)]
    struct Manifest {
        row: usize,
        col: usize,
        channel: usize,
        value: u8,
        class_a: usize,
        class_b: usize,
        location_seed: u64,
    }
    let m: Manifest = serde_json::from_str(json)?;
    let mut spec = TamperSpec::at(m.row, m.col, m.channel, m.value)?;
    spec.location_seed = m.location_seed;
    PoisonPlan::new(m.class_a, m.class_b, spec)
}
