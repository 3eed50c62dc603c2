//! Kernelised multi-resolution correlation-filter tracking.
//!
//! The pipeline crops a padded patch around the target, extracts one feature
//! map per layer, learns an RBF kernel correlation filter per layer in the
//! Fourier domain, and fuses the per-layer response maps into a translation
//! estimate either by the arg-max of their mean (`MaxRes`) or with a small
//! trained convnet. Per-layer model updates are driven by the stability of
//! each layer's response loss, and target size follows an 11-level scale
//! pyramid.
//!
//! Module map:
//! - [`features`]: patch cropping, in-core feature extractors, KMCF ingestion.
//! - [`labels`]: Gaussian regression targets.
//! - [`kernel`]: DFTs, linear and kernelised correlation filters, dense oracles.
//! - [`decoder`]: response stacking, MaxRes, the decoder network and its training.
//! - [`adaptation`]: model interpolation and adaptive learning rates.
//! - [`scale`]: scale pyramid filter.
//! - [`tracker`]: per-sequence orchestration.
//! - [`evaluation`]: OTB-layout ingestion, precision/success metrics, OPE runs.
//! - [`synth`]: synthetic textured sequences with known ground truth.

pub mod adaptation;
pub mod config;
pub mod decoder;
mod error;
pub mod evaluation;
pub mod features;
pub mod image;
pub mod kernel;
pub mod labels;
pub mod scale;
pub mod synth;
pub mod tracker;

pub use error::{KmcError, Result};

/// Axis-aligned box `(x, y, w, h)` in frame pixels, `(x, y)` the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self {
            x: cx - w / 2.0,
            y: cy - h / 2.0,
            w,
            h,
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w > 0.0 && self.h > 0.0
    }

    /// Intersection over union with continuous pixel coordinates.
    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if ix <= 0.0 || iy <= 0.0 {
            return 0.0;
        }
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        (ax - bx).hypot(ay - by)
    }
}
