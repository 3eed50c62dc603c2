mod common;

use std::time::Instant;

use common::*;
use kmc::kernel::{detect_response, rbf_kernel_correlation, train_linear, DualModel};
use kmc::labels::gaussian_labels;
use rand::Rng;

#[test]
fn linear_filter_matches_dense_ridge() {
    let mut rng = rng(1);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let x = random_map(&mut rng, 1, 8, 8);
        let y = gaussian_labels(8, 8, (rng.random_range(4.0..16.0), rng.random_range(4.0..16.0)), 0.1);
        let lambda = rng.random_range(1e-3..1.0);
        let w_hat = train_linear(&x, &y, lambda).unwrap();
        let w = naive_idft2(w_hat.channel(0), 8, 8);
        let dense = dense_circulant_ridge(&x, &y.data, lambda);
        for (a, b) in w.iter().zip(&dense) {
            worst = worst.max((a.re - b).abs());
            assert!(a.im.abs() < 1e-9);
        }
    }
    assert!(worst <= 1e-6, "max diff {worst}");
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn kernel_correlation_matches_all_shifts() {
    let mut rng = rng(2);
    for _ in 0..50 {
        let d = rng.random_range(1..=3);
        let x = random_unit_map(&mut rng, d, 8, 8);
        let z = random_unit_map(&mut rng, d, 8, 8);
        let sigma = rng.random_range(0.1..2.0);
        let k = rbf_kernel_correlation(&x, &z, sigma).unwrap();
        for (a, b) in k.data.iter().zip(all_shift_rbf(&x, &z, sigma)) {
            assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
    }
}

#[test]
fn detection_matches_dense_kernel_ridge() {
    let mut rng = rng(3);
    for _ in 0..10 {
        let d = rng.random_range(1..=3);
        let x = random_unit_map(&mut rng, d, 6, 6);
        let z = random_unit_map(&mut rng, d, 6, 6);
        let y = gaussian_labels(6, 6, (10.0, 10.0), 0.1);
        let (sigma, lambda) = (0.5, 1e-2);
        let model = DualModel::train(x.clone(), &y, lambda, sigma).unwrap();
        let fft = detect_response(&model, &z).unwrap();
        let dense = dense_kernel_ridge_response(&x, &y.data, &z, sigma, lambda);
        for (a, b) in fft.grid.data.iter().zip(&dense) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn detection_is_shift_equivariant() {
    let mut rng = rng(4);
    let x = random_unit_map(&mut rng, 3, 16, 16);
    let y = gaussian_labels(16, 16, (16.0, 16.0), 0.1);
    let model = DualModel::train(x.clone(), &y, 1e-4, 0.2).unwrap();
    for a in 0..16 {
        for b in 0..16 {
            let z = x.cyclic_shift(a as isize, b as isize);
            let r = detect_response(&model, &z).unwrap();
            assert_eq!(r.grid.argmax(), (a, b));
        }
    }
}
