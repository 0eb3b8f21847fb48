//! In-memory RGB raster with values in [0, 1].

use crate::error::{Error, Result};

/// Row-major H x W x 3 raster of `f32` values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

pub const CHANNELS: usize = 3;

impl Image {
    pub fn new(height: usize, width: usize, fill: f32) -> Self {
        Self {
            height,
            width,
            data: vec![fill; height * width * CHANNELS],
        }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * CHANNELS {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values ({height}x{width}x{CHANNELS})", height * width * CHANNELS),
                got: format!("{}", data.len()),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * CHANNELS + c] = v;
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; CHANNELS] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; CHANNELS]) {
        let i = (y * self.width + x) * CHANNELS;
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    /// Mean over all pixels and channels.
    pub fn mean(&self) -> f32 {
        if self.data.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.data.iter().map(|&v| v as f64).sum();
        (sum / self.data.len() as f64) as f32
    }

    /// Errors if any value lies outside [0, 1].
    pub fn validate_range(&self) -> Result<()> {
        for &v in &self.data {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::PixelOutOfRange(v));
            }
        }
        Ok(())
    }

    /// Nearest-neighbor resample to a new size.
    pub fn resize_nearest(&self, new_height: usize, new_width: usize) -> Image {
        let mut out = Image::new(new_height, new_width, 0.0);
        let sy = self.height as f64 / new_height as f64;
        let sx = self.width as f64 / new_width as f64;
        for y in 0..new_height {
            let src_y = (((y as f64 + 0.5) * sy) as usize).min(self.height - 1);
            for x in 0..new_width {
                let src_x = (((x as f64 + 0.5) * sx) as usize).min(self.width - 1);
                out.set_pixel(y, x, self.pixel(src_y, src_x));
            }
        }
        out
    }

    /// Fills the axis-aligned pixel rectangle [x0, x1) x [y0, y1) (clamped to
    /// the image) with a constant color.
    pub fn fill_rect(&mut self, y0: usize, x0: usize, y1: usize, x1: usize, rgb: [f32; CHANNELS]) {
        for y in y0..y1.min(self.height) {
            for x in x0..x1.min(self.width) {
                self.set_pixel(y, x, rgb);
            }
        }
    }
}
