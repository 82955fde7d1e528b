use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved RGB image with channel values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: u32, height: u32, fill: [f32; 3]) -> Self {
        let data = (0..width as usize * height as usize).flat_map(|_| fill).collect();
        Self { width, height, data }
    }

    pub fn from_rgb(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width as usize * height as usize {
            return Err(Error::invalid(format!(
                "{} values do not form a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let o = 3 * (y as usize * self.width as usize + x as usize);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [f32; 3]) {
        let o = 3 * (y as usize * self.width as usize + x as usize);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Mean absolute difference over all channels.
    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::invalid("image sizes differ"));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    /// Box-filter downsampling by an integer factor.
    pub fn downsample(&self, factor: u32) -> Result<Image> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::invalid(format!("cannot downsample by {factor}")));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let mut out = Image::new(w, h, [0.0; 3]);
        let norm = (factor * factor) as f32;
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f32; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let p = self.pixel(x * factor + dx, y * factor + dy);
                        for c in 0..3 {
                            acc[c] += p[c];
                        }
                    }
                }
                out.set_pixel(x, y, acc.map(|v| v / norm));
            }
        }
        Ok(out)
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(path, &self.to_rgb8(), self.width, self.height, image::ColorType::Rgb8)?;
        Ok(())
    }
}
