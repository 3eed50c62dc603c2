//! Fusing per-layer response maps into a translation estimate.
//!
//! Response maps are re-centred (origin moved to the grid centre), resampled
//! by physical displacement onto a shared grid, and min-max rescaled. The
//! stack is decoded either by [`maxres_decode`] or by a trained [`DecoderNet`].

mod io;
mod net;
mod synthetic;
mod train;

pub use io::{load_decoder, load_samples, save_decoder, save_samples};
pub use net::{
    decoder_backward, decoder_forward, DecoderNet, ForwardCache, Gradients, Layout, CONV1_FILTERS, CONV2_FILTERS, HIDDEN, OUTPUTS,
};
pub use synthetic::{generate_synthetic_samples, NoiseParams};
pub use train::{evaluate_rms, maxres_rms, train_decoder, EpochRecord, TrainConfig, TrainReport};

use crate::features::{PATCH_HEIGHT, PATCH_WIDTH};
use crate::kernel::{argmax, ResponseMap};
use crate::{KmcError, Result};

pub const GRID_ROWS: usize = 32;
pub const GRID_COLS: usize = 48;

/// Shared grid and the patch it spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackGeometry {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub patch_rows: usize,
    pub patch_cols: usize,
}

impl Default for StackGeometry {
    fn default() -> Self {
        Self {
            grid_rows: GRID_ROWS,
            grid_cols: GRID_COLS,
            patch_rows: PATCH_HEIGHT,
            patch_cols: PATCH_WIDTH,
        }
    }
}

impl StackGeometry {
    /// Patch pixels per grid cell, `(rows, cols)`.
    pub fn cell_pixels(&self) -> (f64, f64) {
        (
            self.patch_rows as f64 / self.grid_rows as f64,
            self.patch_cols as f64 / self.grid_cols as f64,
        )
    }

    pub fn center(&self) -> (usize, usize) {
        (self.grid_rows / 2, self.grid_cols / 2)
    }

    /// Patch-pixel translation `(dx, dy)` to normalised units.
    pub fn normalize(&self, dx: f64, dy: f64) -> (f64, f64) {
        (dx / self.patch_cols as f64, dy / self.patch_rows as f64)
    }

    pub fn denormalize(&self, dx_n: f64, dy_n: f64) -> (f64, f64) {
        (dx_n * self.patch_cols as f64, dy_n * self.patch_rows as f64)
    }
}

/// `K x rows x cols` channel-stacked response maps, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseStack {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    /// Original cell size of each channel.
    pub cell_sizes: Vec<usize>,
}

impl ResponseStack {
    pub fn new(channels: usize, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || data.len() != channels * rows * cols {
            return Err(KmcError::Shape(format!(
                "{} values for a {channels}x{rows}x{cols} stack",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            rows,
            cols,
            data,
            cell_sizes: vec![1; channels],
        })
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let len = self.rows * self.cols;
        &self.data[k * len..(k + 1) * len]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut [f64] {
        let len = self.rows * self.cols;
        &mut self.data[k * len..(k + 1) * len]
    }
}

/// Normalised translation target, each component in `[-0.5, 0.5]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub stack: ResponseStack,
    pub target: (f64, f64),
}

/// Rescales to `[0, 1]`; constant inputs become all zeros.
pub fn min_max_rescale(values: &mut [f64]) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        values.iter_mut().for_each(|v| *v = 0.0);
    } else {
        values.iter_mut().for_each(|v| *v = (*v - lo) / span);
    }
}

/// Samples a circular-origin map at a signed displacement measured in cells,
/// interpolating bilinearly with wrap-around.
fn sample_circular(map: &ResponseMap, dr: f64, dc: f64) -> f64 {
    let (m, n) = (map.rows() as isize, map.cols() as isize);
    let r0 = dr.floor();
    let c0 = dc.floor();
    let (fr, fc) = (dr - r0, dc - c0);
    let at = |r: isize, c: isize| map.grid.get(r.rem_euclid(m) as usize, c.rem_euclid(n) as usize);
    let (ri, ci) = (r0 as isize, c0 as isize);
    let top = at(ri, ci) * (1.0 - fc) + at(ri, ci + 1) * fc;
    let bottom = at(ri + 1, ci) * (1.0 - fc) + at(ri + 1, ci + 1) * fc;
    top * (1.0 - fr) + bottom * fr
}

/// Re-centres, resamples, and rescales every response onto `geometry`'s grid.
pub fn stack_responses(responses: &[ResponseMap], geometry: &StackGeometry) -> Result<ResponseStack> {
    if responses.is_empty() {
        return Err(KmcError::Shape("no response maps to stack".into()));
    }
    let (gr, gc) = (geometry.grid_rows, geometry.grid_cols);
    let (center_r, center_c) = geometry.center();
    let (pix_r, pix_c) = geometry.cell_pixels();
    let mut data = Vec::with_capacity(responses.len() * gr * gc);
    for map in responses {
        let cell = map.cell_size.max(1) as f64;
        let start = data.len();
        for g_r in 0..gr {
            let dr = (g_r as f64 - center_r as f64) * pix_r / cell;
            for g_c in 0..gc {
                let dc = (g_c as f64 - center_c as f64) * pix_c / cell;
                data.push(sample_circular(map, dr, dc));
            }
        }
        min_max_rescale(&mut data[start..]);
    }
    Ok(ResponseStack {
        channels: responses.len(),
        rows: gr,
        cols: gc,
        data,
        cell_sizes: responses.iter().map(|r| r.cell_size).collect(),
    })
}

/// Arg-max of the channel mean as a patch-pixel translation `(dx, dy)`.
pub fn maxres_decode(stack: &ResponseStack, geometry: &StackGeometry) -> (f64, f64) {
    let len = stack.rows * stack.cols;
    let mut mean = vec![0.0; len];
    for k in 0..stack.channels {
        for (m, v) in mean.iter_mut().zip(stack.channel(k)) {
            *m += v;
        }
    }
    let inv = 1.0 / stack.channels as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    let idx = argmax(&mean);
    let (r, c) = (idx / stack.cols, idx % stack.cols);
    let (center_r, center_c) = (stack.rows / 2, stack.cols / 2);
    let pix_r = geometry.patch_rows as f64 / stack.rows as f64;
    let pix_c = geometry.patch_cols as f64 / stack.cols as f64;
    (
        (c as f64 - center_c as f64) * pix_c,
        (r as f64 - center_r as f64) * pix_r,
    )
}

/// Root-mean-square error between predicted and target normalised translations.
pub fn loss_rms(pred: (f64, f64), target: (f64, f64)) -> f64 {
    let ex = target.0 - pred.0;
    let ey = target.1 - pred.1;
    (0.5 * (ex * ex + ey * ey)).sqrt()
}
