//! Gaussian regression targets with the peak at the DFT origin.

/// Default ratio between label bandwidth and target size (in feature cells).
pub const DEFAULT_BANDWIDTH_FACTOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub data: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub sigma_rc: (f64, f64),
}

impl LabelMap {
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Circular distance of index `i` from the origin on a ring of length `n`.
#[inline]
pub fn circular_distance(i: usize, n: usize) -> f64 {
    i.min(n - i) as f64
}

/// `exp(-(d_r^2 / 2 sigma_r^2 + d_c^2 / 2 sigma_c^2))` over circular distances,
/// with `sigma = bandwidth_factor * target size`.
pub fn gaussian_labels(rows: usize, cols: usize, target_size_cells: (f64, f64), bandwidth_factor: f64) -> LabelMap {
    assert!(rows >= 1 && cols >= 1, "label map needs a non-empty grid");
    let (h, w) = target_size_cells;
    assert!(h > 0.0 && w > 0.0 && bandwidth_factor > 0.0, "label bandwidth must be positive");
    let sigma_r = bandwidth_factor * h;
    let sigma_c = bandwidth_factor * w;
    let row_terms: Vec<f64> = (0..rows)
        .map(|i| circular_distance(i, rows).powi(2) / (2.0 * sigma_r * sigma_r))
        .collect();
    let col_terms: Vec<f64> = (0..cols)
        .map(|j| circular_distance(j, cols).powi(2) / (2.0 * sigma_c * sigma_c))
        .collect();
    let mut data = Vec::with_capacity(rows * cols);
    for rt in &row_terms {
        for ct in &col_terms {
            data.push((-(rt + ct)).exp());
        }
    }
    LabelMap {
        data,
        rows,
        cols,
        sigma_rc: (sigma_r, sigma_c),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn peak_at_origin() {
        let y = gaussian_labels(40, 60, (18.0, 27.0), 0.1);
        assert_eq!(y.get(0, 0), 1.0);
        assert_eq!(gaussian_labels(1, 1, (1.0, 1.0), 0.1).data, vec![1.0]);
    }

    #[test]
    fn unit_sigma_values() {
        let y = gaussian_labels(8, 8, (10.0, 10.0), 0.1);
        assert_eq!(y.sigma_rc, (1.0, 1.0));
        let expected = (-0.5f64).exp();
        assert!((y.get(1, 0) - expected).abs() < 1e-15);
        assert!((y.get(7, 0) - expected).abs() < 1e-15);
        assert!((y.get(1, 0) - 0.6065).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn symmetric_and_decaying(rows in 1usize..24, cols in 1usize..24, h in 0.5f64..30.0, w in 0.5f64..30.0) {
            let y = gaussian_labels(rows, cols, (h, w), 0.1);
            for i in 0..rows {
                for j in 0..cols {
                    prop_assert_eq!(y.get(i, j), y.get((rows - i) % rows, (cols - j) % cols));
                }
            }
            for j in 1..=cols / 2 {
                prop_assert!(y.get(0, j) <= y.get(0, j - 1));
            }
        }
    }
}
