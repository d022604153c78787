//! PNG directory trees: `root/<class_name>/<filename>.png`.
//!
//! The on-disk format is deliberately lossless. A tampered pixel survives a
//! write/load round trip byte-exactly, which a quantizing format would not
//! guarantee.

use std::fs;
use std::path::Path;

use image::{DynamicImage, RgbImage};

use crate::dataset::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::image::Image;

/// Loads a dataset from one subdirectory per class.
///
/// Class indices follow lexicographic subdirectory order and files are read
/// in lexicographic order within each class, so two loads of the same tree
/// are identical. Only 8-bit RGB PNGs are accepted; files without a `.png`
/// extension are ignored. The result is tagged `Split::Train`; retag with
/// [`LabeledDataset::with_split`] when loading val or test trees.
pub fn load_png_directory(root: &Path) -> Result<LabeledDataset> {
    let mut class_dirs: Vec<(String, std::path::PathBuf)> = Vec::new();
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            let name = entry.file_name().to_string_lossy().into_owned();
            class_dirs.push((name, path));
        }
    }
    class_dirs.sort_by(|a, b| a.0.cmp(&b.0));
    if class_dirs.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for (class_index, (name, dir)) in class_dirs.iter().enumerate() {
        let mut files: Vec<std::path::PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .map(|e| e.eq_ignore_ascii_case("png"))
                        .unwrap_or(false)
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::EmptyClass {
                class: class_index,
                name: name.clone(),
            });
        }
        for file in files {
            let img = decode_rgb8_png(&file)?;
            match dims {
                None => dims = Some((img.height(), img.width())),
                Some((h, w)) => {
                    if img.height() != h || img.width() != w {
                        return Err(Error::ShapeMismatch(format!(
                            "{} is {}x{} but the tree started with {}x{}",
                            file.display(),
                            img.height(),
                            img.width(),
                            h,
                            w
                        )));
                    }
                }
            }
            images.push(img);
            labels.push(class_index);
        }
    }

    LabeledDataset::new(
        images,
        labels,
        class_dirs.into_iter().map(|(name, _)| name).collect(),
        Split::Train,
        root.display().to_string(),
    )
}

fn decode_rgb8_png(path: &Path) -> Result<Image> {
    let decoded = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        source: e,
    })?;
    match decoded {
        DynamicImage::ImageRgb8(rgb) => {
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            Image::from_pixels(h, w, rgb.into_raw())
        }
        other => Err(Error::format(
            path,
            format!(
                "expected 8-bit RGB without alpha, found {:?}",
                other.color()
            ),
        )),
    }
}

/// Writes a dataset as the PNG tree [`load_png_directory`] expects.
///
/// Files are named by a per-class counter in dataset order, so loading the
/// tree back yields the same images per class in the same relative order
/// (the overall order becomes class-major).
pub fn write_dataset(dataset: &LabeledDataset, root: &Path) -> Result<()> {
    for name in dataset.class_names() {
        if name.is_empty() || name.contains(['/', '\\']) {
            return Err(Error::InvalidArgument(format!(
                "class name {name:?} is not a valid directory name"
            )));
        }
        let dir = root.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut counters = vec![0usize; dataset.num_classes()];
    for i in 0..dataset.len() {
        let label = dataset.label(i);
        let img = dataset.image(i);
        let path = root
            .join(&dataset.class_names()[label])
            .join(format!("img_{:06}.png", counters[label]));
        counters[label] += 1;
        let buffer = RgbImage::from_raw(
            img.width() as u32,
            img.height() as u32,
            img.pixels().to_vec(),
        )
        .expect("image invariant guarantees buffer size");
        buffer
            .save_with_format(&path, image::ImageFormat::Png)
            .map_err(Error::Encode)?;
    }
    Ok(())
}
