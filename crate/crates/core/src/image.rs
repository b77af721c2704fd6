//! 8-bit RGB images and their tensor views.

use ecat_runtime::{Scalar, Tensor};

use crate::error::{CodecError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(CodecError::Dataset(format!(
                "{width}x{height} image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// `[H,W,3]` with values in `[0,1]`.
    pub fn to_unit<T: Scalar>(&self) -> Vec<T> {
        self.data.iter().map(|&b| T::from_f64(f64::from(b) / 255.0)).collect()
    }

    /// Stacks images into a `[B,H,W,3]` tensor in `[0,1]`.
    pub fn batch<T: Scalar>(images: &[&Image]) -> Result<Tensor<T>> {
        let first = images.first().ok_or_else(|| CodecError::Dataset("empty batch".into()))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(images.len() * h * w * 3);
        for img in images {
            if (img.height, img.width) != (h, w) {
                return Err(CodecError::Dataset("mixed image sizes in one batch".into()));
            }
            data.extend(img.to_unit::<T>());
        }
        Ok(Tensor::new(&[images.len(), h, w, 3], data)?)
    }

    /// Clamps and rounds unit-range values back to 8 bits.
    pub fn from_unit<T: Scalar>(width: usize, height: usize, values: &[T]) -> Result<Self> {
        let data = values
            .iter()
            .map(|v| (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        Self::new(width, height, data)
    }
}
