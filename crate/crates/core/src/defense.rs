//! Mitigations and detection for the stationary single-pixel trigger.
//!
//! The trigger behaves like isolated pepper noise, so a small median filter
//! erases it; Gaussian smoothing attenuates it; augmentation at training
//! time breaks its stationarity. A uniform intensity quantizer stands in
//! for transform-free quantizing codecs as a robustness probe. Detection is
//! an exhaustive per-class scan for coordinates where one exact intensity
//! is suspiciously consistent.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::image::Image;

/// Per-channel median over a `window` x `window` neighborhood with edge
/// replication. The window must be odd and at least 3.
///
/// The median is taken from a 256-bin intensity histogram; the test suite
/// checks it against an independent sort-based oracle.
pub fn median_filter(image: &Image, window: usize) -> Result<Image> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "median window must be odd and >= 3, got {window}"
        )));
    }
    let (h, w) = (image.height() as isize, image.width() as isize);
    let r = (window / 2) as isize;
    let rank = (window * window) / 2;
    let mut out = image.clone();
    let mut hist = [0u32; 256];
    for row in 0..h {
        for col in 0..w {
            for ch in 0..3 {
                hist.fill(0);
                for dy in -r..=r {
                    let y = (row + dy).clamp(0, h - 1) as usize;
                    for dx in -r..=r {
                        let x = (col + dx).clamp(0, w - 1) as usize;
                        hist[image.get(y, x, ch) as usize] += 1;
                    }
                }
                let mut seen = 0u32;
                let mut median = 0u8;
                for (value, &count) in hist.iter().enumerate() {
                    seen += count;
                    if seen > rank as u32 {
                        median = value as u8;
                        break;
                    }
                }
                out.set(row as usize, col as usize, ch, median);
            }
        }
    }
    Ok(out)
}

/// Normalized 1-D Gaussian taps for radius `ceil(3 sigma)`.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in taps.iter_mut() {
        *t /= sum;
    }
    taps
}

/// Separable Gaussian blur with edge replication, applied per channel in
/// floating point and rounded to [0, 255] once at the end.
pub fn gaussian_smooth(image: &Image, sigma: f64) -> Result<Image> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let taps = gaussian_kernel(sigma);
    let radius = (taps.len() / 2) as isize;
    let (h, w) = (image.height() as isize, image.width() as isize);

    // Horizontal pass.
    let mut mid = vec![0.0f64; (h * w) as usize * 3];
    for row in 0..h {
        for col in 0..w {
            for ch in 0..3 {
                let mut acc = 0.0;
                for (t, &tap) in taps.iter().enumerate() {
                    let x = (col + t as isize - radius).clamp(0, w - 1) as usize;
                    acc += tap * image.get(row as usize, x, ch) as f64;
                }
                mid[((row * w + col) * 3) as usize + ch] = acc;
            }
        }
    }
    // Vertical pass plus final rounding.
    let mut out = image.clone();
    for row in 0..h {
        for col in 0..w {
            for ch in 0..3 {
                let mut acc = 0.0;
                for (t, &tap) in taps.iter().enumerate() {
                    let y = (row + t as isize - radius).clamp(0, h - 1);
                    acc += tap * mid[((y * w + col) * 3) as usize + ch];
                }
                out.set(
                    row as usize,
                    col as usize,
                    ch,
                    acc.round().clamp(0.0, 255.0) as u8,
                );
            }
        }
    }
    Ok(out)
}

/// Random horizontal flip (p = 0.5) then translation by up to +/-4 pixels
/// with edge replication. Draw order is flip, dx, dy, so a seed fully
/// determines the output. Meant for training-time use: it moves the trigger
/// coordinate around, destroying its stationarity.
pub fn augment(image: &Image, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flip = rng.random_bool(0.5);
    let dx = rng.random_range(-4i64..=4);
    let dy = rng.random_range(-4i64..=4);
    let (h, w) = (image.height() as i64, image.width() as i64);
    let mut out = image.clone();
    for row in 0..h {
        for col in 0..w {
            let src_row = (row - dy).clamp(0, h - 1) as usize;
            let mut src_col = (col - dx).clamp(0, w - 1);
            if flip {
                src_col = w - 1 - src_col;
            }
            for ch in 0..3 {
                out.set(
                    row as usize,
                    col as usize,
                    ch,
                    image.get(src_row, src_col as usize, ch),
                );
            }
        }
    }
    out
}

/// Rounds every intensity to the nearest multiple of `step`. A stand-in for
/// quantizing codecs; note that an exact-zero trigger value is itself a
/// multiple of any step and therefore survives this probe.
pub fn quantize_intensities(image: &Image, step: u8) -> Result<Image> {
    if step == 0 {
        return Err(Error::InvalidArgument("quantizer step must be >= 1".into()));
    }
    let mut out = image.clone();
    let step = step as u32;
    let pixels: Vec<u8> = image
        .pixels()
        .iter()
        .map(|&p| {
            let q = ((p as u32 + step / 2) / step) * step;
            q.min(255) as u8
        })
        .collect();
    for (i, v) in pixels.into_iter().enumerate() {
        let (row, col, ch) = (
            i / 3 / image.width(),
            (i / 3) % image.width(),
            i % 3,
        );
        out.set(row, col, ch, v);
    }
    Ok(out)
}

/// A defense applied uniformly to a dataset split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DefenseFilter {
    Median { window: usize },
    Smooth { sigma: f64 },
    Quantize { step: u8 },
    Augment { seed: u64 },
}

impl std::fmt::Display for DefenseFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DefenseFilter::Median { window } => write!(f, "median({window})"),
            DefenseFilter::Smooth { sigma } => write!(f, "smooth({sigma})"),
            DefenseFilter::Quantize { step } => write!(f, "quantize({step})"),
            DefenseFilter::Augment { seed } => write!(f, "augment(seed={seed})"),
        }
    }
}

/// Applies `defense` to every image; labels, order and counts are untouched.
/// Augmentation derives one sub-seed per image index so the draw sequence is
/// stable no matter how the dataset is chunked.
pub fn apply_defense_to_split(
    dataset: &LabeledDataset,
    defense: DefenseFilter,
) -> Result<LabeledDataset> {
    let mut images = Vec::with_capacity(dataset.len());
    for (i, img) in dataset.images().iter().enumerate() {
        let filtered = match defense {
            DefenseFilter::Median { window } => median_filter(img, window)?,
            DefenseFilter::Smooth { sigma } => gaussian_smooth(img, sigma)?,
            DefenseFilter::Quantize { step } => quantize_intensities(img, step)?,
            DefenseFilter::Augment { seed } => {
                augment(img, seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
            }
        };
        images.push(filtered);
    }
    Ok(dataset.replace_images(images))
}

/// One scanned coordinate of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFinding {
    pub class: usize,
    pub class_name: String,
    pub row: usize,
    pub col: usize,
    pub channel: usize,
    /// The most common exact intensity at this coordinate.
    pub value: u8,
    /// Fraction of the class's images sharing that intensity.
    pub consistency: f64,
    pub flagged: bool,
}

/// Exhaustive stationary-trigger scan: for every class and every
/// (row, col, channel), the largest fraction of that class's images sharing
/// one exact intensity. Findings come back sorted by consistency descending
/// (ties broken by class, row, col, channel) and are flagged at
/// `threshold`. A threshold of 0 degenerately flags every coordinate.
///
/// This is itself the brute-force oracle: nothing is sampled or
/// approximated.
pub fn detect_stationary_backdoor(
    dataset: &LabeledDataset,
    threshold: f64,
) -> Result<Vec<DetectionFinding>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in [0, 1], got {threshold}"
        )));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (h, w) = dataset.dimensions().expect("nonempty");
    let coords = h * w * 3;
    let mut findings = Vec::with_capacity(dataset.num_classes() * coords);
    for class in 0..dataset.num_classes() {
        let members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.label(i) == class)
            .collect();
        if members.is_empty() {
            return Err(Error::EmptyClass {
                class,
                name: dataset.class_names()[class].clone(),
            });
        }
        let mut hist = [0u32; 256];
        for coord in 0..coords {
            hist.fill(0);
            for &i in &members {
                hist[dataset.image(i).pixels()[coord] as usize] += 1;
            }
            let (mut best_value, mut best_count) = (0usize, 0u32);
            for (value, &count) in hist.iter().enumerate() {
                if count > best_count {
                    best_value = value;
                    best_count = count;
                }
            }
            let consistency = best_count as f64 / members.len() as f64;
            findings.push(DetectionFinding {
                class,
                class_name: dataset.class_names()[class].clone(),
                row: coord / 3 / w,
                col: (coord / 3) % w,
                channel: coord % 3,
                value: best_value as u8,
                consistency,
                flagged: consistency >= threshold,
            });
        }
    }
    findings.sort_by(|a, b| {
        b.consistency
            .partial_cmp(&a.consistency)
            .expect("consistencies are finite")
            .then_with(|| {
                (a.class, a.row, a.col, a.channel).cmp(&(b.class, b.row, b.col, b.channel))
            })
    });
    Ok(findings)
}

/// Detection report: all flagged findings plus the strongest `top_n` for
/// context, as canonical JSON.
pub fn detection_report_json(
    findings: &[DetectionFinding],
    threshold: f64,
    top_n: usize,
) -> Result<String> {
    #[derive(Serialize)]
    struct Report<'a> {
        threshold: f64,
        flagged: Vec<&'a DetectionFinding>,
        strongest: Vec<&'a DetectionFinding>,
    }
    let report = Report {
        threshold,
        flagged: findings.iter().filter(|f| f.flagged).collect(),
        strongest: findings.iter().take(top_n).collect(),
    };
    crate::eval::canonical_json(&report)
}
