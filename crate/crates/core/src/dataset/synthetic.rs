//! Seeded synthetic datasets for desk-scale experiments.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::image::Image;

/// Mean-color palette levels. Three levels over three channels give 27
/// class colors whose pairwise distance is at least 80 intensity units in
/// some channel.
const PALETTE_LEVELS: [u8; 3] = [48, 128, 208];
const MAX_PALETTE_CLASSES: usize = 27;

/// Uniform noise amplitude around the class mean. Kept small enough that
/// no generated intensity can clip at 0 or 255, which would otherwise give
/// many images an identical extreme value at the same coordinate.
const NOISE: i32 = 32;

fn palette_color(class: usize) -> [u8; 3] {
    [
        PALETTE_LEVELS[class % 3],
        PALETTE_LEVELS[(class / 3) % 3],
        PALETTE_LEVELS[(class / 9) % 3],
    ]
}

fn class_names(num_classes: usize) -> Vec<String> {
    (0..num_classes).map(|c| format!("class_{c:02}")).collect()
}

/// Generates a linearly separable dataset: every class draws from a distinct
/// mean color plus uniform pixel noise. Deterministic under `seed`.
pub fn generate_synthetic(
    num_classes: usize,
    per_class: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes == 0 || per_class == 0 || height == 0 || width == 0 {
        return Err(Error::InvalidArgument(
            "num_classes, per_class, height and width must all be >= 1".into(),
        ));
    }
    if num_classes > MAX_PALETTE_CLASSES {
        return Err(Error::InvalidArgument(format!(
            "at most {MAX_PALETTE_CLASSES} synthetic classes are supported, got {num_classes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(num_classes * per_class);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for class in 0..num_classes {
        let mean = palette_color(class);
        for _ in 0..per_class {
            let mut pixels = Vec::with_capacity(height * width * 3);
            for _ in 0..height * width {
                for ch in 0..3 {
                    let v = mean[ch] as i32 + rng.random_range(-NOISE..=NOISE);
                    pixels.push(v.clamp(0, 255) as u8);
                }
            }
            images.push(Image::from_pixels(height, width, pixels)?);
            labels.push(class);
        }
    }
    LabeledDataset::new(
        images,
        labels,
        class_names(num_classes),
        Split::Train,
        format!("synthetic(classes={num_classes},per_class={per_class},seed={seed})"),
    )
}

// Parameters of the overlapping generator. The shared field gives all
// classes common structure and the class field separates them. Irreducible
// ambiguity comes from the content-mismatch rate: that fraction of each
// class's images render another class's template while keeping their label,
// so even a perfect content classifier misses them. A convolutional net can
// average away jitter and pixel noise but cannot beat that floor, which puts
// baselines in the moderate-accuracy regime where a planted trigger is the
// single most reliable feature of the tampered class.
const SHARED_AMPLITUDE: f64 = 40.0;
const CLASS_AMPLITUDE: f64 = 26.0;
const JITTER: i32 = 30;
const TEXTURE_NOISE: i32 = 14;
const CONTENT_MISMATCH: f64 = 0.12;
const GRID: usize = 4;

/// Bilinear upsample of a GRID x GRID coefficient grid to height x width.
fn upsample(grid: &[f64], height: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; height * width];
    for r in 0..height {
        let gy = ((r as f64 + 0.5) / height as f64 * GRID as f64 - 0.5)
            .clamp(0.0, (GRID - 1) as f64);
        let y0 = gy.floor() as usize;
        let y1 = (y0 + 1).min(GRID - 1);
        let fy = gy - y0 as f64;
        for c in 0..width {
            let gx = ((c as f64 + 0.5) / width as f64 * GRID as f64 - 0.5)
                .clamp(0.0, (GRID - 1) as f64);
            let x0 = gx.floor() as usize;
            let x1 = (x0 + 1).min(GRID - 1);
            let fx = gx - x0 as f64;
            let top = grid[y0 * GRID + x0] * (1.0 - fx) + grid[y0 * GRID + x1] * fx;
            let bottom = grid[y1 * GRID + x0] * (1.0 - fx) + grid[y1 * GRID + x1] * fx;
            out[r * width + c] = top * (1.0 - fy) + bottom * fy;
        }
    }
    out
}

fn random_field(rng: &mut ChaCha8Rng, amplitude: f64, height: usize, width: usize) -> Vec<f64> {
    let grid: Vec<f64> = (0..GRID * GRID)
        .map(|_| rng.random_range(-amplitude..amplitude))
        .collect();
    upsample(&grid, height, width)
}

/// Generates a deliberately confusable dataset: smooth per-class templates
/// over a shared background field, per-image color jitter and pixel noise,
/// and a fixed fraction of images whose content comes from a different
/// class than their label. Baseline classifiers therefore top out at
/// moderate accuracy, the regime where a planted trigger is worth learning.
/// Intensities stay inside [8, 247] so a zeroed channel can never occur
/// naturally. Deterministic under `seed`.
pub fn generate_overlapping(
    num_classes: usize,
    per_class: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes == 0 || per_class == 0 || height == 0 || width == 0 {
        return Err(Error::InvalidArgument(
            "num_classes, per_class, height and width must all be >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // One shared field and one class field per channel.
    let shared: Vec<Vec<f64>> = (0..3)
        .map(|_| random_field(&mut rng, SHARED_AMPLITUDE, height, width))
        .collect();
    let class_fields: Vec<Vec<Vec<f64>>> = (0..num_classes)
        .map(|_| {
            (0..3)
                .map(|_| random_field(&mut rng, CLASS_AMPLITUDE, height, width))
                .collect()
        })
        .collect();

    let mut images = Vec::with_capacity(num_classes * per_class);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for class in 0..num_classes {
        for _ in 0..per_class {
            let content = if rng.random_bool(CONTENT_MISMATCH) {
                rng.random_range(0..num_classes)
            } else {
                class
            };
            let jitter: [i32; 3] = [
                rng.random_range(-JITTER..=JITTER),
                rng.random_range(-JITTER..=JITTER),
                rng.random_range(-JITTER..=JITTER),
            ];
            let mut pixels = Vec::with_capacity(height * width * 3);
            for p in 0..height * width {
                for ch in 0..3 {
                    let template = 128.0 + shared[ch][p] + class_fields[content][ch][p];
                    let v = template
                        + jitter[ch] as f64
                        + rng.random_range(-TEXTURE_NOISE..=TEXTURE_NOISE) as f64;
                    pixels.push(v.round().clamp(8.0, 247.0) as u8);
                }
            }
            images.push(Image::from_pixels(height, width, pixels)?);
            labels.push(class);
        }
    }
    LabeledDataset::new(
        images,
        labels,
        class_names(num_classes),
        Split::Train,
        format!("overlapping(classes={num_classes},per_class={per_class},seed={seed})"),
    )
}
