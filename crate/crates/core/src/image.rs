//! Minimal floating-point image container used for frames and patches.

use std::path::Path;

use crate::{KmcError, Result};

/// Row-major, channel-interleaved image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(channels == 1 || channels == 3, "images are grayscale or RGB");
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(KmcError::Shape(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(KmcError::Shape(format!(
                "buffer of {} values for {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Grayscale image from a function of pixel coordinates.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Pixel value with out-of-range coordinates clamped to the nearest edge.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize, c: usize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.get(xc, yc, c)
    }

    /// Bilinear sample at continuous pixel-center coordinates with edge replication.
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = self.get_clamped(xi, yi, c);
        let b = self.get_clamped(xi + 1, yi, c);
        let d = self.get_clamped(xi, yi + 1, c);
        let e = self.get_clamped(xi + 1, yi + 1, c);
        let top = a + (b - a) * fx;
        let bottom = d + (e - d) * fx;
        top + (bottom - top) * fy
    }

    /// Luma conversion (ITU-R BT.601 weights); grayscale images are cloned.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Bilinear resize of the whole image to `width x height`.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Image::new(width, height, self.channels);
        for oy in 0..height {
            let y = (oy as f64 + 0.5) * sy - 0.5;
            for ox in 0..width {
                let x = (ox as f64 + 0.5) * sx - 0.5;
                for c in 0..self.channels {
                    out.set(ox, oy, c, self.sample_bilinear(x, y, c));
                }
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Image> {
        let img = ::image::open(path).map_err(|e| KmcError::Image(format!("{}: {e}", path.display())))?;
        let out = match img {
            ::image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = g.dimensions();
                let data = g.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
                Image::from_vec(w as usize, h as usize, 1, data)?
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                let data = rgb.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
                Image::from_vec(w as usize, h as usize, 3, data)?
            }
        };
        Ok(out)
    }

    /// Writes an 8-bit PNG (values clamped to `[0, 1]`).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let color = if self.channels == 1 {
            ::image::ExtendedColorType::L8
        } else {
            ::image::ExtendedColorType::Rgb8
        };
        ::image::save_buffer(path, &bytes, self.width as u32, self.height as u32, color)
            .map_err(|e| KmcError::Image(format!("{}: {e}", path.display())))
    }
}
