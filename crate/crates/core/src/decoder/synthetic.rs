//! Synthetic hierarchical response stacks with known translation.
//!
//! Each channel is a Gaussian bump at the true offset. Deeper channels get
//! broader bumps and larger peak jitter. A sample may also contain one
//! distractor, a look-alike object at a random position that every channel
//! responds to with a per-channel gain: shallow layers are fooled more
//! easily than deep ones. Additive noise goes on top.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{min_max_rescale, ResponseStack, StackGeometry, TrainingSample};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseParams {
    pub geometry: StackGeometry,
    /// True offsets are drawn uniformly from `[-max_offset, max_offset]^2`.
    pub max_offset: f64,
    /// Bump standard deviation per channel, in grid cells.
    pub peak_sigma: Vec<f64>,
    /// Peak jitter standard deviation per channel, in grid cells.
    pub jitter_std: Vec<f64>,
    pub additive_std: f64,
    /// Probability that a sample contains a distractor.
    pub distractor_prob: f64,
    /// Distractor amplitude relative to the target, per channel.
    pub distractor_gain: Vec<f64>,
    pub distractor_amplitude: (f64, f64),
}

impl NoiseParams {
    pub fn layers(&self) -> usize {
        self.peak_sigma.len()
    }

    /// Clean bumps: no jitter, noise, or distractors.
    pub fn noiseless(layers: usize) -> Self {
        let mut p = Self::default_for(layers);
        p.jitter_std = vec![0.0; layers];
        p.additive_std = 0.0;
        p.distractor_prob = 0.0;
        p
    }

    /// Default noise profile with `layers` channels, widths and jitter
    /// growing with depth.
    pub fn default_for(layers: usize) -> Self {
        let depth = |k: usize| if layers > 1 { k as f64 / (layers - 1) as f64 } else { 0.0 };
        Self {
            geometry: StackGeometry::default(),
            max_offset: 0.3,
            peak_sigma: (0..layers).map(|k| 1.0 + 2.0 * depth(k)).collect(),
            jitter_std: (0..layers).map(|k| 0.5 + 2.0 * depth(k)).collect(),
            additive_std: 0.05,
            distractor_prob: 0.5,
            distractor_gain: (0..layers).map(|k| 1.0 - 0.7 * depth(k)).collect(),
            distractor_amplitude: (0.9, 1.3),
        }
    }
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self::default_for(4)
    }
}

fn add_bump(channel: &mut [f64], cols: usize, center: (f64, f64), sigma: f64, amplitude: f64) {
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (i, v) in channel.iter_mut().enumerate() {
        let dr = (i / cols) as f64 - center.0;
        let dc = (i % cols) as f64 - center.1;
        *v += amplitude * (-(dr * dr + dc * dc) * inv).exp();
    }
}

/// Draws `n` samples; identical `(n, params, seed)` give identical datasets.
pub fn generate_synthetic_samples(n: usize, params: &NoiseParams, seed: u64) -> Vec<TrainingSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = params.geometry;
    let (rows, cols) = (g.grid_rows, g.grid_cols);
    let (center_r, center_c) = g.center();
    let k = params.layers();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    (0..n)
        .map(|_| {
            let dx = rng.random_range(-params.max_offset..=params.max_offset);
            let dy = rng.random_range(-params.max_offset..=params.max_offset);
            let true_r = center_r as f64 + dy * rows as f64;
            let true_c = center_c as f64 + dx * cols as f64;
            let distractor = (rng.random::<f64>() < params.distractor_prob).then(|| {
                let (lo, hi) = params.distractor_amplitude;
                let pos = (rng.random_range(0.0..rows as f64), rng.random_range(0.0..cols as f64));
                (pos, rng.random_range(lo..=hi))
            });
            let mut data = vec![0.0; k * rows * cols];
            for (layer, channel) in data.chunks_exact_mut(rows * cols).enumerate() {
                let jitter = params.jitter_std[layer];
                let jr = jitter * unit.sample(&mut rng);
                let jc = jitter * unit.sample(&mut rng);
                add_bump(channel, cols, (true_r + jr, true_c + jc), params.peak_sigma[layer], 1.0);
                if let Some((pos, amp)) = distractor {
                    add_bump(channel, cols, pos, params.peak_sigma[layer], amp * params.distractor_gain[layer]);
                }
                if params.additive_std > 0.0 {
                    for v in channel.iter_mut() {
                        *v += params.additive_std * unit.sample(&mut rng);
                    }
                }
                min_max_rescale(channel);
            }
            let mut stack = ResponseStack::new(k, rows, cols, data).expect("consistent stack shape");
            stack.cell_sizes = vec![1; k];
            TrainingSample { stack, target: (dx, dy) }
        })
        .collect()
}
