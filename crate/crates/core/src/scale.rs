//! Scale estimation with a one-dimensional correlation filter over an
//! 11-level geometric scale pyramid.
//!
//! Each pyramid level contributes one descriptor row. The filter correlates
//! the stored rows with new rows along the scale axis, zero-padded so no
//! level wraps around, and divides each lag by the number of overlapping
//! rows. Without that division the shrinking overlap pulls the peak towards
//! zero change.

use rustfft::num_complex::Complex64;

use crate::features::{crop_rect, extract_hog_lite};
use crate::image::Image;
use crate::kernel::{argmax, fft1_in_place};
use crate::{KmcError, Result};

pub const DEFAULT_SCALE_COUNT: usize = 11;
pub const DEFAULT_SCALE_STEP: f64 = 1.02;
/// Side of the square patch each scale sample is resized to.
pub const SCALE_TEMPLATE: usize = 64;
const SCALE_CELL: usize = 8;
const SCALE_ORIENTATIONS: usize = 9;
const SCALE_LAMBDA: f64 = 1e-2;

/// `step^e` for `e = -(count / 2) ..= count / 2`, ascending.
pub fn scale_factors(count: usize, step: f64) -> Vec<f64> {
    let half = (count / 2) as i32;
    (-half..=half).map(|e| step.powi(e)).collect()
}

/// Row-major `scales x features` descriptor matrix, rows ordered by
/// ascending scale factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSamples {
    pub scales: usize,
    pub features: usize,
    pub data: Vec<f64>,
}

impl ScaleSamples {
    pub fn row(&self, s: usize) -> &[f64] {
        &self.data[s * self.features..(s + 1) * self.features]
    }

    /// Mean squared norm of a row.
    fn row_energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>() / self.scales as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ScaleFilter {
    /// `features x len` conjugated spectra of the zero-padded columns.
    numerator: Vec<Complex64>,
    /// Row energy plus the regulariser.
    denominator: f64,
    features: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleState {
    pub current_scale: f64,
    pub factors: Vec<f64>,
    pub learning_rate: f64,
    pub lambda: f64,
    pub min_scale: f64,
    pub max_scale: f64,
    filter: Option<ScaleFilter>,
}

impl ScaleState {
    pub fn new(count: usize, step: f64, learning_rate: f64) -> Result<Self> {
        if count == 0 || count % 2 == 0 {
            return Err(KmcError::InvalidParameter(format!("scale count {count} must be odd")));
        }
        if !(step > 1.0) {
            return Err(KmcError::InvalidParameter(format!("scale step {step} must exceed 1")));
        }
        Ok(Self {
            current_scale: 1.0,
            factors: scale_factors(count, step),
            learning_rate,
            lambda: SCALE_LAMBDA,
            min_scale: 0.0,
            max_scale: f64::INFINITY,
            filter: None,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.filter.is_some()
    }

    /// Transform length: twice the level count, so lags never wrap.
    fn padded_len(&self) -> usize {
        2 * self.factors.len()
    }

    /// Spectrum of every zero-padded descriptor column, column-major.
    fn spectra(&self, samples: &ScaleSamples) -> Result<Vec<Complex64>> {
        if samples.scales != self.factors.len() {
            return Err(KmcError::Shape(format!(
                "{} scale rows, expected {}",
                samples.scales,
                self.factors.len()
            )));
        }
        let len = self.padded_len();
        let mut out = vec![Complex64::default(); samples.features * len];
        for (f, col) in out.chunks_exact_mut(len).enumerate() {
            for (i, z) in col.iter_mut().take(samples.scales).enumerate() {
                *z = Complex64::new(samples.data[i * samples.features + f], 0.0);
            }
            fft1_in_place(col, false);
        }
        Ok(out)
    }

    fn fresh_filter(&self, samples: &ScaleSamples) -> Result<ScaleFilter> {
        let mut numerator = self.spectra(samples)?;
        numerator.iter_mut().for_each(|z| *z = z.conj());
        Ok(ScaleFilter {
            numerator,
            denominator: samples.row_energy() + self.lambda,
            features: samples.features,
        })
    }

    /// Trains from scratch on `samples`.
    pub fn train(&mut self, samples: &ScaleSamples) -> Result<()> {
        self.filter = Some(self.fresh_filter(samples)?);
        Ok(())
    }

    /// Interpolates the filter towards one trained on `samples`.
    pub fn update(&mut self, samples: &ScaleSamples) -> Result<()> {
        let fresh = self.fresh_filter(samples)?;
        let eta = self.learning_rate;
        match &mut self.filter {
            None => self.filter = Some(fresh),
            Some(f) => {
                if f.features != fresh.features {
                    return Err(KmcError::Shape("scale descriptor length changed".into()));
                }
                for (a, b) in f.numerator.iter_mut().zip(&fresh.numerator) {
                    *a += (b - *a) * eta;
                }
                f.denominator += (fresh.denominator - f.denominator) * eta;
            }
        }
        Ok(())
    }

    /// Filter response per pyramid level: the overlap-averaged correlation
    /// of the stored rows with `samples` shifted by `level - centre` rows.
    pub fn response(&self, samples: &ScaleSamples) -> Result<Vec<f64>> {
        let filter = self.filter.as_ref().ok_or(KmcError::NotInitialized)?;
        if filter.features != samples.features {
            return Err(KmcError::Shape("scale descriptor length changed".into()));
        }
        let len = self.padded_len();
        let z = self.spectra(samples)?;
        let mut acc = vec![Complex64::default(); len];
        for (zc, nc) in z.chunks_exact(len).zip(filter.numerator.chunks_exact(len)) {
            for ((a, zv), nv) in acc.iter_mut().zip(zc).zip(nc) {
                *a += zv * nv;
            }
        }
        fft1_in_place(&mut acc, true);
        let count = self.factors.len();
        let center = count / 2;
        Ok((0..count)
            .map(|level| {
                let lag = level as isize - center as isize;
                let overlap = (count - lag.unsigned_abs()) as f64;
                let corr = acc[lag.rem_euclid(len as isize) as usize].re / len as f64;
                corr / (overlap * filter.denominator)
            })
            .collect())
    }

    /// Best pyramid level for `samples` without changing any state.
    pub fn detect(&self, samples: &ScaleSamples) -> Result<usize> {
        Ok(argmax(&self.response(samples)?))
    }

    /// Multiplies the current scale by the factor at `level`, within bounds.
    pub fn apply_level(&mut self, level: usize) {
        self.current_scale = (self.current_scale * self.factors[level]).clamp(self.min_scale, self.max_scale);
    }
}

/// Descriptors of the target at every pyramid level around `center`.
pub fn build_scale_samples(frame: &Image, center: (f64, f64), base_size: (f64, f64), state: &ScaleState) -> Result<ScaleSamples> {
    let (w, h) = base_size;
    if !(w > 0.0 && h > 0.0) {
        return Err(KmcError::InvalidTarget(format!("base size {w}x{h}")));
    }
    let mut data = Vec::new();
    let mut features = 0;
    for &factor in &state.factors {
        let s = factor * state.current_scale;
        let patch = crop_rect(frame, center, (s * w, s * h), (SCALE_TEMPLATE, SCALE_TEMPLATE))?;
        let fm = extract_hog_lite(&patch, SCALE_CELL, SCALE_ORIENTATIONS)?;
        features = fm.data().len();
        data.extend_from_slice(fm.data());
    }
    Ok(ScaleSamples {
        scales: state.factors.len(),
        features,
        data,
    })
}

/// Detects the best level, rescales, and updates the filter with `samples`.
pub fn estimate_scale(samples: &ScaleSamples, state: &ScaleState) -> Result<ScaleState> {
    let mut next = state.clone();
    let level = next.detect(samples)?;
    next.apply_level(level);
    next.update(samples)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factors_are_geometric_and_centred() {
        let f = scale_factors(11, 1.02);
        assert_eq!(f.len(), 11);
        assert_eq!(f[5], 1.0);
        assert!((f[0] - 1.02f64.powi(-5)).abs() < 1e-15);
        assert!(f.windows(2).all(|w| w[1] > w[0]));
        for e in 0..5 {
            assert!((f[e] * f[10 - e] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn untrained_state_is_rejected() {
        let st = ScaleState::new(11, 1.02, 0.0025).unwrap();
        let samples = ScaleSamples {
            scales: 11,
            features: 3,
            data: vec![0.0; 33],
        };
        assert!(matches!(estimate_scale(&samples, &st), Err(KmcError::NotInitialized)));
    }

    #[test]
    fn zero_descriptors_give_finite_response() {
        let mut st = ScaleState::new(11, 1.02, 0.0025).unwrap();
        let samples = ScaleSamples {
            scales: 11,
            features: 4,
            data: vec![0.0; 44],
        };
        st.train(&samples).unwrap();
        assert!(st.response(&samples).unwrap().iter().all(|v| v.is_finite()));
    }
}
