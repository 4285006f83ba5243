//! Float image tensor, the unit all transforms operate on.

use crate::error::CoreError;
use ndarray::Array3;
use std::path::Path;

/// An RGB image as a `(height, width, 3)` array of `f64` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub data: Array3<f64>,
}

impl ImageTensor {
    /// Wraps an array, validating shape and value range.
    pub fn new(data: Array3<f64>) -> Result<Self, CoreError> {
        if data.shape()[2] != 3 {
            return Err(CoreError::InvalidImage(format!(
                "expected 3 channels, got {}",
                data.shape()[2]
            )));
        }
        for &v in data.iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(CoreError::InvalidImage(format!(
                    "value {v} outside [0,1]"
                )));
            }
        }
        Ok(ImageTensor { data })
    }

    /// Wraps an array without the range scan; caller guarantees validity.
    pub fn from_valid(data: Array3<f64>) -> Self {
        debug_assert_eq!(data.shape()[2], 3);
        ImageTensor { data }
    }

    /// Constant-valued image.
    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        ImageTensor {
            data: Array3::from_elem((height, width, 3), value.clamp(0.0, 1.0)),
        }
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    /// True when both sides are divisible by 64, so all pyramid strides are exact.
    pub fn stride_aligned(&self) -> bool {
        self.height() % 64 == 0 && self.width() % 64 == 0
    }

    /// Clamps every value into `[0,1]`, mapping non-finite values to 0.
    pub fn clipped(mut self) -> Self {
        self.data.mapv_inplace(|v| {
            if v.is_finite() {
                v.clamp(0.0, 1.0)
            } else {
                0.0
            }
        });
        self
    }

    /// Checks the value invariant without consuming the image.
    pub fn validate(&self) -> Result<(), CoreError> {
        for &v in self.data.iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(CoreError::InvalidImage(format!(
                    "value {v} outside [0,1]"
                )));
            }
        }
        Ok(())
    }

    /// Per-channel mean.
    pub fn channel_means(&self) -> [f64; 3] {
        let n = (self.height() * self.width()) as f64;
        let mut sums = [0.0; 3];
        for px in self.data.rows() {
            for c in 0..3 {
                sums[c] += px[c];
            }
        }
        sums.map(|s| s / n)
    }

    /// Mean over all pixels and channels.
    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Loads a PNG/JPEG file, converting to RGB floats in `[0,1]`.
    pub fn load(path: &Path) -> Result<Self, CoreError> {
        let img = image::open(path)
            .map_err(|e| CoreError::Codec(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = Array3::zeros((h, w, 3));
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[(y as usize, x as usize, c)] = px.0[c] as f64 / 255.0;
            }
        }
        Ok(ImageTensor { data })
    }

    /// Saves as PNG (8-bit RGB).
    pub fn save_png(&self, path: &Path) -> Result<(), CoreError> {
        let buf = self.to_rgb8_bytes();
        image::save_buffer(
            path,
            &buf,
            self.width() as u32,
            self.height() as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| CoreError::Codec(format!("{}: {e}", path.display())))
    }

    /// Quantizes to interleaved 8-bit RGB bytes.
    pub fn to_rgb8_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.height() * self.width() * 3);
        for row in self.data.outer_iter() {
            for px in row.outer_iter() {
                for c in 0..3 {
                    buf.push((px[c].clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        buf
    }

    /// Rebuilds from interleaved 8-bit RGB bytes.
    pub fn from_rgb8_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self, CoreError> {
        if bytes.len() != height * width * 3 {
            return Err(CoreError::InvalidImage(format!(
                "byte length {} does not match {height}x{width}x3",
                bytes.len()
            )));
        }
        let mut data = Array3::zeros((height, width, 3));
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data[(y, x, c)] = bytes[(y * width + x) * 3 + c] as f64 / 255.0;
                }
            }
        }
        Ok(ImageTensor { data })
    }
}
