//! Fourier-domain correlation filters.
//!
//! Conventions used throughout:
//! - forward DFTs are unscaled, inverse DFTs scale by `1 / (M N)`;
//! - the linear filter solves ridge regression over the circulant
//!   (convolution) data matrix, which diagonalises to
//!   `W_d = conj(X_d) . Y / (sum_d conj(X_d) . X_d + lambda)`;
//! - response index `(i, j)` with `i > M / 2` denotes the negative shift
//!   `i - M` (see [`signed_shift`]).

mod dense;
mod fft;

pub use dense::brute_force_ridge;
pub(crate) use fft::fft1_in_place;

use rustfft::num_complex::Complex64;

use crate::features::FeatureMap;
use crate::labels::LabelMap;
use crate::{KmcError, Result};

/// Default ridge regulariser.
pub const DEFAULT_LAMBDA: f64 = 1e-4;
/// Default RBF kernel bandwidth.
pub const DEFAULT_KERNEL_SIGMA: f64 = 0.2;
/// Largest tolerated imaginary residue of a real-valued inverse DFT,
/// relative to the largest magnitude.
pub const IMAGINARY_TOLERANCE: f64 = 1e-6;
const NEAR_SINGULAR: f64 = 1e-12;

/// Complex `D x M x N` spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMap {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl SpectralMap {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Self {
            channels,
            rows,
            cols,
            data: vec![Complex64::default(); channels * rows * cols],
        }
    }

    pub fn channel(&self, d: usize) -> &[Complex64] {
        let len = self.rows * self.cols;
        &self.data[d * len..(d + 1) * len]
    }

    pub fn channel_mut(&mut self, d: usize) -> &mut [Complex64] {
        let len = self.rows * self.cols;
        &mut self.data[d * len..(d + 1) * len]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.rows, self.cols)
    }

    /// Real parts, failing if the imaginary residue exceeds `tolerance`
    /// relative to the largest magnitude.
    pub fn real_part_checked(&self, tolerance: f64) -> Result<Vec<f64>> {
        let max_magnitude = self.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let residue = self.data.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        if residue > tolerance * max_magnitude {
            return Err(KmcError::ImaginaryResidue { residue, max_magnitude });
        }
        Ok(self.data.iter().map(|z| z.re).collect())
    }
}

/// Real `M x N` grid, e.g. a kernel correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct RealGrid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RealGrid {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Row-major arg-max; ties resolve to the lowest index.
    pub fn argmax(&self) -> (usize, usize) {
        let idx = argmax(&self.data);
        (idx / self.cols, idx % self.cols)
    }
}

/// Per-layer detection scores over all cyclic shifts.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    pub grid: RealGrid,
    pub layer_id: usize,
    pub cell_size: usize,
}

impl ResponseMap {
    pub fn rows(&self) -> usize {
        self.grid.rows
    }

    pub fn cols(&self) -> usize {
        self.grid.cols
    }

    pub fn max(&self) -> f64 {
        self.grid.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Arg-max as signed `(row, col)` shift in cells.
    pub fn peak_shift(&self) -> (isize, isize) {
        let (r, c) = self.grid.argmax();
        (signed_shift(r, self.rows()), signed_shift(c, self.cols()))
    }
}

/// Learned per-layer model: dual coefficients in the Fourier domain plus the
/// training sample they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct DualModel {
    pub alpha_hat: SpectralMap,
    pub template: FeatureMap,
    pub lambda: f64,
    pub kernel_sigma: f64,
}

impl DualModel {
    /// Trains on `template` against `labels`: `k_xx` then the dual solve.
    pub fn train(template: FeatureMap, labels: &LabelMap, lambda: f64, kernel_sigma: f64) -> Result<Self> {
        let kxx = rbf_kernel_correlation(&template, &template, kernel_sigma)?;
        let alpha_hat = train_dual(&kxx, labels, lambda)?;
        Ok(Self {
            alpha_hat,
            template,
            lambda,
            kernel_sigma,
        })
    }
}

/// Row-major arg-max with lowest-index tie-breaking.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Maps a circular index to a signed shift: indices above `n / 2` wrap negative.
#[inline]
pub fn signed_shift(index: usize, n: usize) -> isize {
    if index > n / 2 {
        index as isize - n as isize
    } else {
        index as isize
    }
}

/// Forward DFT of every channel of a real feature map.
pub fn dft2(x: &FeatureMap) -> SpectralMap {
    let (d, m, n) = x.shape();
    let mut out = SpectralMap {
        channels: d,
        rows: m,
        cols: n,
        data: x.data().iter().map(|&v| Complex64::new(v, 0.0)).collect(),
    };
    for ch in 0..d {
        fft::fft2_in_place(out.channel_mut(ch), m, n, false);
    }
    out
}

/// Forward DFT of a single-channel real grid.
pub fn dft2_grid(x: &RealGrid) -> SpectralMap {
    let mut out = SpectralMap {
        channels: 1,
        rows: x.rows,
        cols: x.cols,
        data: x.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
    };
    fft::fft2_in_place(&mut out.data, x.rows, x.cols, false);
    out
}

/// Forward DFT of a complex tensor.
pub fn dft2_complex(x: &SpectralMap) -> SpectralMap {
    let mut out = x.clone();
    for ch in 0..x.channels {
        fft::fft2_in_place(out.channel_mut(ch), x.rows, x.cols, false);
    }
    out
}

/// Inverse DFT scaled by `1 / (M N)`.
pub fn idft2(x: &SpectralMap) -> SpectralMap {
    let mut out = x.clone();
    let scale = 1.0 / (x.rows * x.cols) as f64;
    for ch in 0..x.channels {
        let buf = out.channel_mut(ch);
        fft::fft2_in_place(buf, x.rows, x.cols, true);
        buf.iter_mut().for_each(|z| *z *= scale);
    }
    out
}

/// `sum_d a_d . b_d` elementwise, giving one `M x N` spectrum.
pub fn multichannel_dot(a: &SpectralMap, b: &SpectralMap) -> Result<SpectralMap> {
    if a.shape() != b.shape() {
        return Err(KmcError::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let mut out = SpectralMap::zeros(1, a.rows, a.cols);
    for d in 0..a.channels {
        for ((o, x), w) in out.data.iter_mut().zip(a.channel(d)).zip(b.channel(d)) {
            *o += x * w;
        }
    }
    Ok(out)
}

fn label_spectrum(y: &LabelMap) -> SpectralMap {
    dft2_grid(&RealGrid::new(y.rows, y.cols, y.data.clone()))
}

fn check_label_shape(x: (usize, usize), y: &LabelMap) -> Result<()> {
    if x != (y.rows, y.cols) {
        return Err(KmcError::Shape(format!("map {:?} vs labels {}x{}", x, y.rows, y.cols)));
    }
    Ok(())
}

/// Closed-form multi-channel linear correlation filter, one spectrum per channel.
pub fn train_linear(x: &FeatureMap, y: &LabelMap, lambda: f64) -> Result<SpectralMap> {
    check_label_shape((x.rows(), x.cols()), y)?;
    if !(lambda >= 0.0) {
        return Err(KmcError::InvalidParameter(format!("lambda {lambda}")));
    }
    let xf = dft2(x);
    let yf = label_spectrum(y);
    let mut denom: Vec<f64> = vec![lambda; x.rows() * x.cols()];
    for d in 0..xf.channels {
        for (acc, z) in denom.iter_mut().zip(xf.channel(d)) {
            *acc += z.norm_sqr();
        }
    }
    if denom.iter().any(|&v| v == 0.0) {
        return Err(KmcError::DivisionByZero);
    }
    let mut w = xf.clone();
    for d in 0..w.channels {
        for ((wv, yv), den) in w.channel_mut(d).iter_mut().zip(&yf.data).zip(&denom) {
            *wv = wv.conj() * yv / den;
        }
    }
    Ok(w)
}

/// Gaussian kernel correlation over all cyclic shifts:
/// `k[i][j] = exp(-max(0, |x|^2 + |x2|^2 - 2 c[i][j]) / sigma)` with
/// `c = F^-1(sum_d conj(X_d) . X2_d)` and full-tensor norms.
pub fn rbf_kernel_correlation(x: &FeatureMap, x2: &FeatureMap, sigma: f64) -> Result<RealGrid> {
    if !x.same_shape(x2) {
        return Err(KmcError::Shape(format!("{:?} vs {:?}", x.shape(), x2.shape())));
    }
    if !(sigma > 0.0) {
        return Err(KmcError::InvalidParameter(format!("kernel sigma {sigma}")));
    }
    let xf = dft2(x);
    let x2f = dft2(x2);
    let mut cross = SpectralMap::zeros(1, x.rows(), x.cols());
    for d in 0..xf.channels {
        for ((o, a), b) in cross.data.iter_mut().zip(xf.channel(d)).zip(x2f.channel(d)) {
            *o += a.conj() * b;
        }
    }
    let corr = idft2(&cross).real_part_checked(IMAGINARY_TOLERANCE)?;
    let norms = x.norm_sq() + x2.norm_sq();
    let data = corr
        .into_iter()
        .map(|c| (-(norms - 2.0 * c).max(0.0) / sigma).exp())
        .collect();
    Ok(RealGrid::new(x.rows(), x.cols(), data))
}

/// Dual coefficients `alpha_hat = Y_hat / (k_hat_xx + lambda)`.
pub fn train_dual(kxx: &RealGrid, y: &LabelMap, lambda: f64) -> Result<SpectralMap> {
    check_label_shape((kxx.rows, kxx.cols), y)?;
    if !(lambda >= 0.0) {
        return Err(KmcError::InvalidParameter(format!("lambda {lambda}")));
    }
    let kf = dft2_grid(kxx);
    let yf = label_spectrum(y);
    let mut alpha = kf.clone();
    for (a, (k, yv)) in alpha.data.iter_mut().zip(kf.data.iter().zip(&yf.data)) {
        let den = k + lambda;
        if den.norm() < NEAR_SINGULAR {
            return Err(KmcError::NearSingular(den.norm()));
        }
        *a = yv / den;
    }
    Ok(alpha)
}

/// Response map `F^-1(F(k_xz) . alpha_hat)` of `z` under `model`.
pub fn detect_response(model: &DualModel, z: &FeatureMap) -> Result<ResponseMap> {
    if !model.template.same_shape(z) {
        return Err(KmcError::Shape(format!(
            "template {:?} vs sample {:?}",
            model.template.shape(),
            z.shape()
        )));
    }
    let kxz = rbf_kernel_correlation(&model.template, z, model.kernel_sigma)?;
    let mut spec = dft2_grid(&kxz);
    if spec.data.len() != model.alpha_hat.data.len() {
        return Err(KmcError::Shape("alpha does not match template".into()));
    }
    for (s, a) in spec.data.iter_mut().zip(&model.alpha_hat.data) {
        *s *= a;
    }
    let data = idft2(&spec).real_part_checked(IMAGINARY_TOLERANCE)?;
    Ok(ResponseMap {
        grid: RealGrid::new(z.rows(), z.cols(), data),
        layer_id: z.layer_id,
        cell_size: z.cell_size,
    })
}
