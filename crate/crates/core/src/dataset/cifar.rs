//! CIFAR-10 binary batch format.
//!
//! Each record is 3073 bytes: one label byte followed by 3072 pixel bytes in
//! channel-planar R,G,B order, each plane 1024 bytes row-major. The loader
//! converts planes to the toolkit's interleaved HWC layout.

use std::fs;
use std::path::Path;

use crate::dataset::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::image::Image;

pub const CIFAR10_CLASS_NAMES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

const SIDE: usize = 32;
const PLANE_BYTES: usize = SIDE * SIDE;
const RECORD_BYTES: usize = 1 + 3 * PLANE_BYTES;
const TRAIN_BATCHES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_BATCH: &str = "test_batch.bin";

/// Loads the standard CIFAR-10 binary batches from `directory`.
///
/// `Split::Train` reads `data_batch_1.bin` through `data_batch_5.bin`,
/// `Split::Test` reads `test_batch.bin`. A validation split is carved out of
/// the training set afterwards with [`crate::dataset::split_train_val`], so
/// requesting `Split::Val` here is an error.
pub fn load_cifar10_binary(directory: &Path, split: Split) -> Result<LabeledDataset> {
    let files: &[&str] = match split {
        Split::Train => &TRAIN_BATCHES,
        Split::Test => std::slice::from_ref(&TEST_BATCH),
        Split::Val => {
            return Err(Error::InvalidArgument(
                "CIFAR-10 has no validation batch files; use split_train_val on the train split"
                    .into(),
            ))
        }
    };

    let mut images = Vec::new();
    let mut labels = Vec::new();
    for name in files {
        let path = directory.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() % RECORD_BYTES != 0 {
            return Err(Error::format(
                &path,
                format!(
                    "file length {} is not a multiple of the {}-byte record size",
                    bytes.len(),
                    RECORD_BYTES
                ),
            ));
        }
        for record in bytes.chunks_exact(RECORD_BYTES) {
            let label = record[0] as usize;
            if label >= CIFAR10_CLASS_NAMES.len() {
                return Err(Error::format(&path, format!("label byte {label} >= 10")));
            }
            labels.push(label);
            images.push(planes_to_image(&record[1..]));
        }
    }

    LabeledDataset::new(
        images,
        labels,
        CIFAR10_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        split,
        directory.display().to_string(),
    )
}

/// Channel-planar record body (R plane, G plane, B plane) to interleaved HWC.
fn planes_to_image(planes: &[u8]) -> Image {
    debug_assert_eq!(planes.len(), 3 * PLANE_BYTES);
    let mut pixels = vec![0u8; 3 * PLANE_BYTES];
    for ch in 0..3 {
        let plane = &planes[ch * PLANE_BYTES..(ch + 1) * PLANE_BYTES];
        for (i, &v) in plane.iter().enumerate() {
            pixels[i * 3 + ch] = v;
        }
    }
    Image::from_pixels(SIDE, SIDE, pixels).expect("record size is fixed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    /// Interleaved image back to planar record bytes; written independently of
    /// `planes_to_image` so the pair proves the conversion is a bijection.
    fn image_to_planes(img: &Image) -> Vec<u8> {
        let mut out = vec![0u8; 3 * PLANE_BYTES];
        for ch in 0..3 {
            for r in 0..SIDE {
                for c in 0..SIDE {
                    out[ch * PLANE_BYTES + r * SIDE + c] = img.get(r, c, ch);
                }
            }
        }
        out
    }

    fn fixture_record(label: u8, fill: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut rec = vec![label];
        rec.extend((0..3 * PLANE_BYTES).map(fill));
        rec
    }

    fn write_batches(dir: &Path, per_batch: usize) {
        let mut k = 0u32;
        for name in TRAIN_BATCHES {
            let mut bytes = Vec::new();
            for _ in 0..per_batch {
                let rec = fixture_record((k % 10) as u8, |i| ((i as u32 + k * 7) % 251) as u8);
                bytes.extend_from_slice(&rec);
                k += 1;
            }
            fs::write(dir.join(name), bytes).unwrap();
        }
    }

    #[test]
    fn missing_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_cifar10_binary(dir.path(), Split::Test).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn truncated_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(TEST_BATCH), vec![0u8; RECORD_BYTES + 5]).unwrap();
        let err = load_cifar10_binary(dir.path(), Split::Test).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn bad_label_errors() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(TEST_BATCH), fixture_record(10, |_| 0)).unwrap();
        let err = load_cifar10_binary(dir.path(), Split::Test).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn val_split_request_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_cifar10_binary(dir.path(), Split::Val).is_err());
    }

    #[test]
    fn first_record_matches_byte_dump_oracle() {
        let dir = tempfile::tempdir().unwrap();
        write_batches(dir.path(), 3);
        let ds = load_cifar10_binary(dir.path(), Split::Train).unwrap();
        assert_eq!(ds.len(), 15);

        // Independent byte-dump oracle over the raw fixture file: the loader's
        // first image must agree with direct index arithmetic on the bytes.
        let raw = fs::read(dir.path().join(TRAIN_BATCHES[0])).unwrap();
        assert_eq!(ds.label(0), raw[0] as usize);
        let img = ds.image(0);
        for c in 0..SIDE {
            for ch in 0..3 {
                let oracle = raw[1 + ch * PLANE_BYTES + c];
                assert_eq!(img.get(0, c, ch), oracle, "row 0, col {c}, ch {ch}");
            }
        }
    }

    #[test]
    fn plane_conversion_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        write_batches(dir.path(), 2);
        let ds = load_cifar10_binary(dir.path(), Split::Train).unwrap();
        let mut k = 0;
        for name in TRAIN_BATCHES {
            let raw = fs::read(dir.path().join(name)).unwrap();
            for rec in raw.chunks_exact(RECORD_BYTES) {
                assert_eq!(image_to_planes(ds.image(k)), rec[1..]);
                k += 1;
            }
        }
    }
}
