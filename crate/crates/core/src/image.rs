//! Real-valued images in `[-1, 1]`, stored height x width x channels.
//!
//! On disk an image is an 8-bit lossless PNG; pixel `p` maps to
//! `p / 127.5 - 1`.

use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::shape("non-empty image", format!("{height}x{width}x{channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(
                format!("{} values for {height}x{width}x{channels}", height * width * channels),
                data.len(),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
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

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f32) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &ImageTensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f32, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn from_u8(height: usize, width: usize, channels: usize, pixels: &[u8]) -> Result<Self> {
        let data = pixels.iter().map(|&p| p as f32 / 127.5 - 1.0).collect();
        Self::new(height, width, channels, data)
    }

    /// Quantizes to the 8-bit grid: `round((v + 1) * 127.5)`, clamped.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_value(v)).collect()
    }

    /// Snaps every value onto the 8-bit grid so that a PNG round trip is
    /// exact.
    pub fn quantized(&self) -> Self {
        let data = self.to_u8().into_iter().map(|p| p as f32 / 127.5 - 1.0).collect();
        Self {
            data,
            ..self.clone()
        }
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        match img {
            image::DynamicImage::ImageLuma8(buf) => {
                let (w, h) = buf.dimensions();
                Self::from_u8(h as usize, w as usize, 1, buf.as_raw())
            }
            other => {
                let buf = other.to_rgb8();
                let (w, h) = buf.dimensions();
                Self::from_u8(h as usize, w as usize, 3, buf.as_raw())
            }
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            c => return Err(Error::Image(format!("cannot encode {c}-channel image as PNG"))),
        };
        image::save_buffer_with_format(
            path,
            &self.to_u8(),
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }
}

#[inline]
fn quantize_value(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Stacks images into an `N x C x H x W` tensor.
pub fn batch_to_tensor(images: &[&ImageTensor], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Precondition("empty image batch".into()))?;
    let (h, w, c) = first.shape();
    let mut buf = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if img.shape() != (h, w, c) {
            return Err(Error::shape(format!("{h}x{w}x{c}"), format!("{:?}", img.shape())));
        }
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    buf.push(img.get(y, x, ch));
                }
            }
        }
    }
    let t = Tensor::from_vec(buf, (images.len(), c, h, w), device)?;
    Ok(t.to_dtype(dtype)?)
}

/// Inverse of [`batch_to_tensor`].
pub fn tensor_to_batch(t: &Tensor) -> Result<Vec<ImageTensor>> {
    let (n, c, h, w) = t.dims4()?;
    let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut img = ImageTensor::filled(h, w, c, 0.0);
        let base = i * c * h * w;
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    img.set(y, x, ch, flat[base + (ch * h + y) * w + x]);
                }
            }
        }
        out.push(img);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_round_trip_is_exact_on_grid() {
        let px: Vec<u8> = (0..=255u8).collect();
        let img = ImageTensor::from_u8(16, 16, 1, &px).unwrap();
        assert_eq!(img.to_u8(), px);
        assert_eq!(img.quantized(), img);
    }

    #[test]
    fn quantization_error_is_bounded() {
        let data: Vec<f32> = (0..300).map(|i| -1.0 + i as f32 * (2.0 / 299.0)).collect();
        let img = ImageTensor::new(10, 10, 3, data).unwrap();
        assert!(img.quantized().max_abs_diff(&img) <= 1.0 / 255.0 + 1e-6);
    }

    #[test]
    fn rejects_bad_length() {
        assert!(ImageTensor::new(2, 2, 3, vec![0.0; 11]).is_err());
    }

    #[test]
    fn tensor_layout_round_trip() {
        let data: Vec<f32> = (0..24).map(|i| i as f32 / 24.0).collect();
        let img = ImageTensor::new(2, 4, 3, data).unwrap();
        let t = batch_to_tensor(&[&img, &img], DType::F32, &Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[2, 3, 2, 4]);
        let back = tensor_to_batch(&t).unwrap();
        assert_eq!(back[1], img);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let px: Vec<u8> = (0..96).map(|i| (i * 7 % 256) as u8).collect();
        let img = ImageTensor::from_u8(8, 4, 3, &px).unwrap();
        let path = dir.path().join("x.png");
        img.save_png(&path).unwrap();
        assert_eq!(ImageTensor::load_png(&path).unwrap(), img);
    }
}
