use nalgebra::{DMatrix, DVector};

use crate::features::FeatureMap;
use crate::labels::LabelMap;
use crate::{KmcError, Result};

const MAX_ORACLE_SIZE: usize = 4096;

/// Dense ridge regression over all 2-D cyclic shifts of a single-channel map.
///
/// Row `s` of the data matrix samples `x` at `s - p`, the circulant matrix
/// whose product with `w` is the circular convolution `x * w`. Solves
/// `(C^T C + lambda I) w = C^T y` and returns `w` row-major.
pub fn brute_force_ridge(x: &FeatureMap, y: &LabelMap, lambda: f64) -> Result<Vec<f64>> {
    let (d, m, n) = x.shape();
    if d != 1 {
        return Err(KmcError::Shape(format!("dense oracle is single-channel, got {d} channels")));
    }
    if (m, n) != (y.rows, y.cols) {
        return Err(KmcError::Shape(format!("map {m}x{n} vs labels {}x{}", y.rows, y.cols)));
    }
    let size = m * n;
    if size > MAX_ORACLE_SIZE {
        return Err(KmcError::InvalidParameter(format!("dense oracle limited to {MAX_ORACLE_SIZE} cells")));
    }
    let c = DMatrix::from_fn(size, size, |s, p| {
        let (sr, sc) = (s / n, s % n);
        let (pr, pc) = (p / n, p % n);
        x.get(0, (sr + m - pr) % m, (sc + n - pc) % n)
    });
    let ct = c.transpose();
    let a = &ct * &c + DMatrix::identity(size, size) * lambda;
    let b = &ct * DVector::from_column_slice(&y.data);
    let chol = a.cholesky().ok_or(KmcError::SingularMatrix)?;
    let w = chol.solve(&b);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(KmcError::SingularMatrix);
    }
    Ok(w.iter().copied().collect())
}
