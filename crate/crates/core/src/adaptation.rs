//! Model interpolation over time and per-layer adaptive learning rates.

use std::collections::VecDeque;

use crate::kernel::{DualModel, ResponseMap};
use crate::{KmcError, Result};

/// Default fixed learning rate.
pub const DEFAULT_ETA: f64 = 0.0025;
/// Default number of past losses used for the stability statistics.
pub const DEFAULT_WINDOW: usize = 5;
pub const SIGMA_FLOOR: f64 = 1e-6;

/// How stability maps to a learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RateRule {
    /// `eta_k = s * eta`.
    #[default]
    Linear,
    /// `eta_k = eta / (1 + s)`.
    InverseStability,
}

/// Running loss statistics and current learning rate for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    window: VecDeque<f64>,
    capacity: usize,
    pub mu: f64,
    pub sigma: f64,
    pub stability: f64,
    pub eta_base: f64,
    pub eta_max: f64,
    pub eta_k: f64,
    pub rule: RateRule,
}

impl LayerStats {
    /// Fresh statistics with `eta_max = 10 * eta`.
    pub fn new(eta: f64, window: usize) -> Self {
        Self::with_limits(eta, 10.0 * eta, window, RateRule::Linear)
    }

    pub fn with_limits(eta: f64, eta_max: f64, window: usize, rule: RateRule) -> Self {
        assert!(window >= 1, "stability window must hold at least one loss");
        Self {
            window: VecDeque::with_capacity(window),
            capacity: window,
            mu: 0.0,
            sigma: SIGMA_FLOOR,
            stability: 1.0,
            eta_base: eta,
            eta_max,
            eta_k: eta.clamp(0.0, eta_max),
            rule,
        }
    }

    pub fn window(&self) -> impl Iterator<Item = &f64> {
        self.window.iter()
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }
}

/// Convex interpolation `(1 - eta) * prev + eta * new` of the dual
/// coefficients and the stored template.
pub fn update_model(prev: &DualModel, new: &DualModel, eta: f64) -> Result<DualModel> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(KmcError::InvalidRate(eta));
    }
    if prev.alpha_hat.shape() != new.alpha_hat.shape() || !prev.template.same_shape(&new.template) {
        return Err(KmcError::Shape("models differ in shape".into()));
    }
    if eta == 1.0 {
        return Ok(new.clone());
    }
    // `a + eta (b - a)` keeps `a` exact when nothing changed.
    let mut out = prev.clone();
    for (a, b) in out.alpha_hat.data.iter_mut().zip(&new.alpha_hat.data) {
        *a += (b - *a) * eta;
    }
    for (a, b) in out.template.data_mut().iter_mut().zip(new.template.data()) {
        *a += eta * (b - *a);
    }
    Ok(out)
}

/// Regret of a layer at the chosen position: `max(R) - R(row, col)`.
pub fn layer_loss(response: &ResponseMap, row: usize, col: usize) -> Result<f64> {
    if row >= response.rows() {
        return Err(KmcError::Index {
            index: row,
            len: response.rows(),
        });
    }
    if col >= response.cols() {
        return Err(KmcError::Index {
            index: col,
            len: response.cols(),
        });
    }
    Ok((response.max() - response.grid.get(row, col)).max(0.0))
}

/// Scores `loss` against the statistics of the preceding window, records it,
/// and sets the layer's learning rate.
///
/// With fewer than two past losses the stability is 1 and the rate is the
/// base rate.
pub fn update_stability(stats: &mut LayerStats, loss: f64) {
    let stability = if stats.window.len() < 2 {
        1.0
    } else {
        let n = stats.window.len() as f64;
        // Shifted mean: exact for a constant window.
        let first = stats.window[0];
        let mu = first + stats.window.iter().map(|l| l - first).sum::<f64>() / n;
        let var = stats.window.iter().map(|l| (l - mu).powi(2)).sum::<f64>() / n;
        stats.mu = mu;
        stats.sigma = var.sqrt().max(SIGMA_FLOOR);
        (loss - mu).abs() / stats.sigma
    };
    if stats.window.len() == stats.capacity {
        stats.window.pop_front();
    }
    stats.window.push_back(loss);
    stats.stability = stability;
    let eta = match stats.rule {
        RateRule::Linear => stability * stats.eta_base,
        RateRule::InverseStability => stats.eta_base / (1.0 + stability),
    };
    stats.eta_k = eta.clamp(0.0, stats.eta_max);
}
