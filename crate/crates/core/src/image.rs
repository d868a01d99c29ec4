//! Interleaved (row-major, channel-last) pixel arrays and PNG I/O.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Image<S> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<S>,
}

impl<S: Scalar> Image<S> {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![S::zero(); height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: S) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "buffer of {} values cannot hold {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> S,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    #[inline]
    fn offset(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> S {
        self.data[self.offset(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: S) {
        let i = self.offset(y, x, c);
        self.data[i] = v;
    }

    pub fn map(&self, mut f: impl FnMut(S) -> S) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.max(S::zero()).min(S::one()))
    }

    pub fn cast<T: Scalar>(&self) -> Image<T> {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .map(|v| T::from_f64_lossy(v.to_f64_exact()))
                .collect(),
        }
    }

    /// Planar copy (channel-major) for the encoder.
    pub fn to_planar(&self) -> Vec<S> {
        let plane = self.height * self.width;
        let mut out = vec![S::zero(); plane * self.channels];
        for (p, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + p] = v;
            }
        }
        out
    }

    /// Rectangular window; caller guarantees bounds.
    pub fn window(&self, top: usize, left: usize, height: usize, width: usize) -> Self {
        assert!(top + height <= self.height && left + width <= self.width);
        let mut data = Vec::with_capacity(height * width * self.channels);
        for y in top..top + height {
            let start = self.offset(y, left, 0);
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Self {
            height,
            width,
            channels: self.channels,
            data,
        }
    }

    /// Mean absolute difference between two equally shaped images.
    pub fn mean_abs_diff(&self, other: &Self) -> Result<S> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let n = S::from_usize_lossy(self.data.len().max(1));
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .sum::<S>()
            / n)
    }

    /// 8-bit quantization with rounding, `[0,1] -> [0,255]`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| {
                let x = v.to_f64_exact().clamp(0.0, 1.0) * 255.0;
                x.round() as u8
            })
            .collect()
    }

    pub fn from_u8(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes
            .iter()
            .map(|&b| S::from_f64_lossy(b as f64 / 255.0))
            .collect();
        Self::from_vec(height, width, channels, data)
    }

    /// Decode any supported file into 3-channel RGB in `[0,1]`.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Codec {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::from_u8(h as usize, w as usize, 3, rgb.as_raw())
    }

    /// Write as 8-bit PNG (RGB for 3 channels, luma for 1).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_u8();
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            c => {
                return Err(Error::Shape(format!(
                    "cannot write {c}-channel image as PNG"
                )))
            }
        };
        image::save_buffer_with_format(
            path,
            &bytes,
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::Codec {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::<f32>::from_fn(5, 7, 3, |y, x, c| ((y * 31 + x * 7 + c * 3) % 256) as f32 / 255.0);
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        let back = Image::<f32>::load(&p).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn planar_layout() {
        let img = Image::<f64>::from_fn(1, 2, 3, |_, x, c| (x * 10 + c) as f64);
        assert_eq!(img.to_planar(), vec![0.0, 10.0, 1.0, 11.0, 2.0, 12.0]);
    }
}
