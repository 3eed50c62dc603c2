//! Patch cropping, feature maps, and feature stacks.
//!
//! Every feature map carries the `cell_size` stride it was pooled with, so a
//! response index can be mapped back to patch pixels without guessing.

mod extract;
pub mod kmcf;

pub use extract::{extract_grayscale, extract_hog_lite};
pub use kmcf::{load_feature_stack, write_feature_stacks, KmcfReader};

use crate::image::Image;
use crate::{BBox, KmcError, Result};

pub const PATCH_WIDTH: usize = 240;
pub const PATCH_HEIGHT: usize = 160;

/// Resized crop around the target.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub pixels: Image,
    /// Crop rectangle in frame coordinates; may extend past the frame.
    pub source_rect: BBox,
}

/// `D x M x N` real tensor (channels, rows, cols) for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    data: Vec<f64>,
    channels: usize,
    rows: usize,
    cols: usize,
    pub layer_id: usize,
    pub cell_size: usize,
}

impl FeatureMap {
    pub fn new(channels: usize, rows: usize, cols: usize, data: Vec<f64>, layer_id: usize, cell_size: usize) -> Result<Self> {
        if channels == 0 || rows == 0 || cols == 0 {
            return Err(KmcError::Shape(format!("empty feature map {channels}x{rows}x{cols}")));
        }
        if data.len() != channels * rows * cols {
            return Err(KmcError::Shape(format!(
                "{} values for a {channels}x{rows}x{cols} feature map",
                data.len()
            )));
        }
        Ok(Self {
            data,
            channels,
            rows,
            cols,
            layer_id,
            cell_size,
        })
    }

    pub fn zeros(channels: usize, rows: usize, cols: usize, layer_id: usize, cell_size: usize) -> Self {
        Self {
            data: vec![0.0; channels * rows * cols],
            channels,
            rows,
            cols,
            layer_id,
            cell_size,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, d: usize) -> &[f64] {
        let len = self.rows * self.cols;
        &self.data[d * len..(d + 1) * len]
    }

    pub fn channel_mut(&mut self, d: usize) -> &mut [f64] {
        let len = self.rows * self.cols;
        &mut self.data[d * len..(d + 1) * len]
    }

    #[inline]
    pub fn get(&self, d: usize, r: usize, c: usize) -> f64 {
        self.data[(d * self.rows + r) * self.cols + c]
    }

    /// Squared Frobenius norm over the whole tensor.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Copy with every channel cyclically shifted so that `out[r][c] = self[r - dr][c - dc]`.
    pub fn cyclic_shift(&self, dr: isize, dc: isize) -> FeatureMap {
        let (m, n) = (self.rows as isize, self.cols as isize);
        let mut out = self.clone();
        for d in 0..self.channels {
            let src = self.channel(d);
            let dst = out.channel_mut(d);
            for r in 0..m {
                let sr = (r - dr).rem_euclid(m);
                for c in 0..n {
                    let sc = (c - dc).rem_euclid(n);
                    dst[(r * n + c) as usize] = src[(sr * n + sc) as usize];
                }
            }
        }
        out
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.shape() == other.shape()
    }

    /// Subtracts each channel's mean.
    pub fn subtract_channel_means(&mut self) {
        let len = (self.rows * self.cols) as f64;
        for d in 0..self.channels {
            let ch = self.channel_mut(d);
            let mean = ch.iter().sum::<f64>() / len;
            ch.iter_mut().for_each(|v| *v -= mean);
        }
    }
}

/// Ordered per-layer feature maps for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub layers: Vec<FeatureMap>,
    pub frame_index: usize,
}

impl FeatureStack {
    pub fn new(layers: Vec<FeatureMap>, frame_index: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(KmcError::Shape("feature stack needs at least one layer".into()));
        }
        if layers.windows(2).any(|w| w[0].layer_id >= w[1].layer_id) {
            return Err(KmcError::Shape("layer ids must be strictly increasing".into()));
        }
        Ok(Self { layers, frame_index })
    }
}

/// Crops a `padding`-scaled window around `center` and resizes it to the
/// standard 240x160 patch.
pub fn crop_padded_patch(frame: &Image, center: (f64, f64), target_size: (f64, f64), padding: f64) -> Result<Patch> {
    crop_padded_patch_to(frame, center, target_size, padding, (PATCH_WIDTH, PATCH_HEIGHT))
}

/// [`crop_padded_patch`] with an explicit output size `(width, height)`.
pub fn crop_padded_patch_to(
    frame: &Image,
    center: (f64, f64),
    target_size: (f64, f64),
    padding: f64,
    out_size: (usize, usize),
) -> Result<Patch> {
    let (w, h) = target_size;
    if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
        return Err(KmcError::InvalidTarget(format!("target size {w}x{h}")));
    }
    if !(padding > 0.0 && padding.is_finite()) {
        return Err(KmcError::InvalidParameter(format!("padding {padding}")));
    }
    crop_rect(frame, center, (padding * w, padding * h), out_size)
}

/// Resamples the rectangle of size `crop_size` centred on `center` to
/// `out_size`, replicating edge pixels outside the frame.
pub fn crop_rect(frame: &Image, center: (f64, f64), crop_size: (f64, f64), out_size: (usize, usize)) -> Result<Patch> {
    let (cw, ch) = crop_size;
    let (cx, cy) = center;
    if !(cw > 0.0 && ch > 0.0 && cw.is_finite() && ch.is_finite() && cx.is_finite() && cy.is_finite()) {
        return Err(KmcError::InvalidTarget(format!("crop {cw}x{ch} at ({cx}, {cy})")));
    }
    let (ow, oh) = out_size;
    if ow == 0 || oh == 0 {
        return Err(KmcError::InvalidParameter("zero output size".into()));
    }
    let x0 = cx - cw / 2.0;
    let y0 = cy - ch / 2.0;
    let sx = cw / ow as f64;
    let sy = ch / oh as f64;
    let channels = frame.channels();
    let mut pixels = Image::new(ow, oh, channels);
    // Frame pixel centres sit at integer coordinates.
    for oy in 0..oh {
        let y = y0 + (oy as f64 + 0.5) * sy - 0.5;
        for ox in 0..ow {
            let x = x0 + (ox as f64 + 0.5) * sx - 0.5;
            for c in 0..channels {
                pixels.set(ox, oy, c, frame.sample_bilinear(x, y, c));
            }
        }
    }
    Ok(Patch {
        pixels,
        source_rect: BBox::new(x0, y0, cw, ch),
    })
}

/// 1-D Hann window; a length-1 window is `[1]`.
pub fn hann(len: usize) -> Vec<f64> {
    if len <= 1 {
        return vec![1.0; len];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos())
        .collect()
}

/// Multiplies every channel by the outer product of row and column Hann windows.
pub fn apply_cosine_window(fm: &FeatureMap) -> FeatureMap {
    let wr = hann(fm.rows);
    let wc = hann(fm.cols);
    let mut out = fm.clone();
    let n = fm.cols;
    for d in 0..fm.channels {
        for (idx, v) in out.channel_mut(d).iter_mut().enumerate() {
            *v *= wr[idx / n] * wc[idx % n];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padded_crop_geometry() {
        let frame = Image::filled(640, 480, 1, 0.3);
        let p = crop_padded_patch(&frame, (320.0, 240.0), (100.0, 80.0), 2.2).unwrap();
        assert!((p.source_rect.w - 220.0).abs() < 1e-9);
        assert!((p.source_rect.h - 176.0).abs() < 1e-9);
        assert!((p.source_rect.x - 210.0).abs() < 1e-9);
        assert_eq!((p.pixels.width(), p.pixels.height()), (240, 160));
    }

    #[test]
    fn crop_at_corner_replicates_edges() {
        let frame = Image::from_fn(50, 40, |x, y| (x + y) as f64 / 100.0);
        let p = crop_padded_patch(&frame, (0.0, 0.0), (20.0, 20.0), 2.2).unwrap();
        // Top-left quadrant lies entirely outside and replicates pixel (0, 0).
        assert_eq!(p.pixels.get(0, 0, 0), 0.0);
        assert!(p.pixels.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }

    #[test]
    fn constant_frame_gives_constant_patch() {
        let frame = Image::filled(100, 90, 3, 0.625);
        let p = crop_padded_patch(&frame, (10.0, 80.0), (33.0, 17.0), 2.2).unwrap();
        assert!(p.pixels.data().iter().all(|&v| v == 0.625));
    }

    #[test]
    fn zero_area_target_is_rejected() {
        let frame = Image::filled(10, 10, 1, 0.0);
        assert!(matches!(
            crop_padded_patch(&frame, (5.0, 5.0), (0.0, 4.0), 2.2),
            Err(KmcError::InvalidTarget(_))
        ));
    }

    #[test]
    fn crop_is_translation_consistent() {
        let base = |x: usize, y: usize| (((x * 7 + y * 13) % 17) as f64) / 17.0;
        let frame = Image::from_fn(200, 150, base);
        let shifted = Image::from_fn(200, 150, |x, y| if x >= 5 && y >= 3 { base(x - 5, y - 3) } else { 0.0 });
        let a = crop_padded_patch(&frame, (80.0, 60.0), (30.0, 20.0), 2.2).unwrap();
        let b = crop_padded_patch(&shifted, (85.0, 63.0), (30.0, 20.0), 2.2).unwrap();
        for (x, y) in a.pixels.data().iter().zip(b.pixels.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn hann_three_by_three() {
        let fm = FeatureMap::new(1, 3, 3, vec![1.0; 9], 1, 1).unwrap();
        let w = apply_cosine_window(&fm);
        // hann(3) = [0, 1, 0]; the outer product keeps only the centre.
        let expected = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        for (a, b) in w.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn window_zeroes_corners_and_keeps_singletons() {
        let fm = FeatureMap::new(2, 5, 7, (0..70).map(|i| i as f64 + 1.0).collect(), 1, 1).unwrap();
        let w = apply_cosine_window(&fm);
        for d in 0..2 {
            for (r, c) in [(0, 0), (0, 6), (4, 0), (4, 6)] {
                assert_eq!(w.get(d, r, c), 0.0);
            }
        }
        let one = FeatureMap::new(1, 1, 1, vec![3.5], 1, 1).unwrap();
        assert_eq!(apply_cosine_window(&one).data(), &[3.5]);
    }

    #[test]
    fn stack_rejects_unsorted_ids() {
        let a = FeatureMap::zeros(1, 2, 2, 2, 1);
        let b = FeatureMap::zeros(1, 2, 2, 1, 1);
        assert!(FeatureStack::new(vec![a, b], 1).is_err());
        assert!(FeatureStack::new(vec![], 1).is_err());
    }
}
