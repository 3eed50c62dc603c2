use std::f64::consts::PI;

use super::{FeatureMap, Patch};
use crate::image::Image;
use crate::{KmcError, Result};

const HOG_EPSILON: f64 = 1e-5;

/// Mean-pooled grayscale intensities, mean-subtracted to sum to zero.
pub fn extract_grayscale(patch: &Patch, cell_size: usize) -> Result<FeatureMap> {
    if !matches!(cell_size, 1 | 2 | 4) {
        return Err(KmcError::InvalidParameter(format!("grayscale cell size {cell_size} not in {{1, 2, 4}}")));
    }
    let gray = patch.pixels.to_gray();
    let rows = gray.height() / cell_size;
    let cols = gray.width() / cell_size;
    if rows == 0 || cols == 0 {
        return Err(KmcError::Shape("patch smaller than one cell".into()));
    }
    let norm = (cell_size * cell_size) as f64;
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for y in r * cell_size..(r + 1) * cell_size {
                for x in c * cell_size..(c + 1) * cell_size {
                    acc += gray.get(x, y, 0);
                }
            }
            data[r * cols + c] = acc / norm;
        }
    }
    let mut fm = FeatureMap::new(1, rows, cols, data, 1, cell_size)?;
    fm.subtract_channel_means();
    Ok(fm)
}

/// Per-cell unsigned gradient-orientation histograms with 2x2 block normalisation.
///
/// Orientation bin `b` covers angles `[b, b + 1) * pi / n_orientations`
/// measured from the +x axis, so a purely horizontal gradient lands in bin 0.
pub fn extract_hog_lite(patch: &Patch, cell_size: usize, n_orientations: usize) -> Result<FeatureMap> {
    if cell_size < 2 {
        return Err(KmcError::InvalidParameter(format!("hog cell size {cell_size} < 2")));
    }
    if n_orientations < 4 {
        return Err(KmcError::InvalidParameter(format!("{n_orientations} orientations < 4")));
    }
    let gray = patch.pixels.to_gray();
    let rows = gray.height() / cell_size;
    let cols = gray.width() / cell_size;
    if rows == 0 || cols == 0 {
        return Err(KmcError::Shape("patch smaller than one cell".into()));
    }
    let hist = cell_histograms(&gray, cell_size, n_orientations, rows, cols);

    let cell_energy: Vec<f64> = (0..rows * cols)
        .map(|i| (0..n_orientations).map(|b| hist[b * rows * cols + i].powi(2)).sum())
        .collect();
    let mut data = vec![0.0; n_orientations * rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let r1 = (r + 1).min(rows - 1);
            let c1 = (c + 1).min(cols - 1);
            let mut block = cell_energy[r * cols + c];
            if r1 != r {
                block += cell_energy[r1 * cols + c];
            }
            if c1 != c {
                block += cell_energy[r * cols + c1];
            }
            if r1 != r && c1 != c {
                block += cell_energy[r1 * cols + c1];
            }
            let scale = 1.0 / (block.sqrt() + HOG_EPSILON);
            for b in 0..n_orientations {
                let idx = b * rows * cols + r * cols + c;
                data[idx] = hist[idx] * scale;
            }
        }
    }
    let mut fm = FeatureMap::new(n_orientations, rows, cols, data, 1, cell_size)?;
    fm.subtract_channel_means();
    Ok(fm)
}

fn cell_histograms(gray: &Image, cell_size: usize, bins: usize, rows: usize, cols: usize) -> Vec<f64> {
    let mut hist = vec![0.0; bins * rows * cols];
    let bin_width = PI / bins as f64;
    for y in 0..rows * cell_size {
        for x in 0..cols * cell_size {
            let (xi, yi) = (x as isize, y as isize);
            let gx = gray.get_clamped(xi + 1, yi, 0) - gray.get_clamped(xi - 1, yi, 0);
            let gy = gray.get_clamped(xi, yi + 1, 0) - gray.get_clamped(xi, yi - 1, 0);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).rem_euclid(PI);
            let bin = ((angle / bin_width) as usize).min(bins - 1);
            hist[bin * rows * cols + (y / cell_size) * cols + x / cell_size] += mag;
        }
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::BBox;

    fn patch(img: Image) -> Patch {
        Patch {
            pixels: img,
            source_rect: BBox::new(0.0, 0.0, 240.0, 160.0),
        }
    }

    #[test]
    fn grayscale_shapes() {
        let p = patch(Image::from_fn(240, 160, |x, y| ((x * y) % 7) as f64 / 7.0));
        assert_eq!(extract_grayscale(&p, 1).unwrap().shape(), (1, 160, 240));
        assert_eq!(extract_grayscale(&p, 2).unwrap().shape(), (1, 80, 120));
        assert_eq!(extract_grayscale(&p, 4).unwrap().shape(), (1, 40, 60));
        assert!(extract_grayscale(&p, 3).is_err());
    }

    #[test]
    fn grayscale_sums_to_zero_and_constant_is_zero() {
        let p = patch(Image::from_fn(240, 160, |x, y| ((x + 3 * y) % 11) as f64 / 11.0));
        let fm = extract_grayscale(&p, 2).unwrap();
        assert!(fm.data().iter().sum::<f64>().abs() < 1e-9);
        let flat = patch(Image::filled(240, 160, 1, 0.7));
        assert!(extract_grayscale(&flat, 4).unwrap().data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn hog_constant_patch_is_zero() {
        let flat = patch(Image::filled(240, 160, 1, 0.2));
        let fm = extract_hog_lite(&flat, 4, 9).unwrap();
        assert_eq!(fm.shape(), (9, 40, 60));
        assert!(fm.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hog_vertical_edge_uses_horizontal_gradient_bin() {
        let img = Image::from_fn(240, 160, |x, _| if x < 120 { 0.0 } else { 1.0 });
        // Direct gradient oracle at the edge pixel: gx = 1, gy = 0 -> angle 0.
        let gx = img.get(120, 80, 0) - img.get(118, 80, 0);
        let gy = img.get(119, 81, 0) - img.get(119, 79, 0);
        let expected_bin = ((gy.atan2(gx).rem_euclid(PI)) / (PI / 9.0)) as usize;
        assert_eq!(expected_bin, 0);

        let fm = extract_hog_lite(&patch(img), 4, 9).unwrap();
        let energy: Vec<f64> = (0..9).map(|b| fm.channel(b).iter().map(|v| v * v).sum()).collect();
        let best = energy.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(best, expected_bin);
        assert!(energy.iter().enumerate().all(|(b, &e)| b == expected_bin || e < 1e-20));
    }
}
