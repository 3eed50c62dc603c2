//! Synthetic sequences with exactly known ground truth: a textured square
//! moving at constant velocity, optionally zooming, over a faint static
//! background.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::evaluation::{FRAME_DIR, GROUND_TRUTH_FILE};
use crate::image::Image;
use crate::{BBox, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Target size on the first frame.
    pub target_size: (f64, f64),
    /// Target center on the first frame.
    pub start_center: (f64, f64),
    /// Pixels per frame.
    pub velocity: (f64, f64),
    /// Size multiplier per frame.
    pub zoom: f64,
    pub texture_blobs: usize,
    pub background_blobs: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            frames: 50,
            target_size: (32.0, 32.0),
            start_center: (90.0, 80.0),
            velocity: (2.0, 1.0),
            zoom: 1.0,
            texture_blobs: 14,
            background_blobs: 40,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    x: f64,
    y: f64,
    inv_two_r2: f64,
    amplitude: f64,
}

impl Blob {
    #[inline]
    fn eval(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.x, y - self.y);
        self.amplitude * (-(dx * dx + dy * dy) * self.inv_two_r2).exp()
    }
}

fn random_blobs(rng: &mut ChaCha8Rng, n: usize, extent: (f64, f64), radius: (f64, f64), amplitude: f64) -> Vec<Blob> {
    (0..n)
        .map(|_| {
            let r = rng.random_range(radius.0..radius.1);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            Blob {
                x: rng.random_range(extent.0..extent.1),
                y: rng.random_range(extent.0..extent.1),
                inv_two_r2: 1.0 / (2.0 * r * r),
                amplitude: sign * amplitude * rng.random_range(0.5..1.0),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub frames: Vec<Image>,
    pub ground_truth: Vec<BBox>,
}

/// Ground-truth box on 0-based frame `t`.
pub fn ground_truth_at(cfg: &SynthConfig, t: usize) -> BBox {
    let s = cfg.zoom.powi(t as i32);
    let cx = cfg.start_center.0 + cfg.velocity.0 * t as f64;
    let cy = cfg.start_center.1 + cfg.velocity.1 * t as f64;
    BBox::from_center(cx, cy, cfg.target_size.0 * s, cfg.target_size.1 * s)
}

/// Renders every frame. The target texture lives in target-relative
/// coordinates, so zooming magnifies it without resampling artefacts.
pub fn render_sequence(cfg: &SynthConfig) -> SyntheticSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Texture coordinates span [-0.5, 0.5] over the target box.
    let texture = random_blobs(&mut rng, cfg.texture_blobs, (-0.45, 0.45), (0.06, 0.16), 0.45);
    let span = cfg.width.max(cfg.height) as f64;
    let background = random_blobs(&mut rng, cfg.background_blobs, (0.0, span), (6.0, 20.0), 0.06);
    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).expect("finite noise std");

    let mut frames = Vec::with_capacity(cfg.frames);
    let mut ground_truth = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let gt = ground_truth_at(cfg, t);
        let (cx, cy) = gt.center();
        let mut img = Image::from_fn(cfg.width, cfg.height, |x, y| {
            let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
            let bg = 0.45 + background.iter().map(|b| b.eval(xf, yf)).sum::<f64>();
            let u = (xf - cx) / gt.w;
            let v = (yf - cy) / gt.h;
            // Soft-edged square mask.
            let mask = (-(u / 0.5).powi(8) - (v / 0.5).powi(8)).exp();
            if mask < 1e-6 {
                return bg;
            }
            let tex = 0.5 + texture.iter().map(|b| b.eval(u, v)).sum::<f64>();
            bg * (1.0 - mask) + tex * mask
        });
        if cfg.noise_std > 0.0 {
            for v in img.data_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        for v in img.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        frames.push(img);
        ground_truth.push(gt);
    }
    SyntheticSequence { frames, ground_truth }
}

/// Writes `root/name/img/0001.png ..` and `groundtruth_rect.txt`.
pub fn write_otb(root: &Path, name: &str, seq: &SyntheticSequence) -> Result<PathBuf> {
    let dir = root.join(name);
    let img_dir = dir.join(FRAME_DIR);
    std::fs::create_dir_all(&img_dir)?;
    for (i, frame) in seq.frames.iter().enumerate() {
        frame.save_png(&img_dir.join(format!("{:04}.png", i + 1)))?;
    }
    let gt: String = seq
        .ground_truth
        .iter()
        .map(|b| format!("{},{},{},{}\n", b.x, b.y, b.w, b.h))
        .collect();
    std::fs::write(dir.join(GROUND_TRUTH_FILE), gt)?;
    Ok(dir)
}
