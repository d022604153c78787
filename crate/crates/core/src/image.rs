//! Fixed-size RGB raster, the unit of tampering.

use crate::error::{Error, Result};

/// An 8-bit RGB image with pixels stored row-major in height x width x channel
/// interleaved order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Image {
    /// Number of color channels supported by the toolkit (RGB).
    pub const CHANNELS: usize = 3;

    /// Builds an image from an interleaved HWC pixel buffer.
    pub fn from_pixels(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(
                "image dimensions must be nonzero".into(),
            ));
        }
        let expected = height * width * Self::CHANNELS;
        if pixels.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "pixel buffer length {} does not match {}x{}x{} = {}",
                pixels.len(),
                height,
                width,
                Self::CHANNELS,
                expected
            )));
        }
        Ok(Image {
            height,
            width,
            channels: Self::CHANNELS,
            pixels,
        })
    }

    /// A solid-color image.
    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(height * width * Self::CHANNELS);
        for _ in 0..height * width {
            pixels.extend_from_slice(&rgb);
        }
        Image {
            height,
            width,
            channels: Self::CHANNELS,
            pixels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Byte offset of (row, col, channel) in the interleaved buffer.
    #[inline]
    pub fn offset(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> u8 {
        self.pixels[self.offset(row, col, channel)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: u8) {
        let i = self.offset(row, col, channel);
        self.pixels[i] = value;
    }

    /// Number of bytes at which `self` and `other` differ. Errors on shape mismatch.
    pub fn byte_diff(&self, other: &Image) -> Result<usize> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::ShapeMismatch(format!(
                "cannot diff {}x{} against {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(self
            .pixels
            .iter()
            .zip(other.pixels.iter())
            .filter(|(a, b)| a != b)
            .count())
    }
}
