mod common;

use common::*;
use kmc::decoder::*;
use kmc::kernel::{RealGrid, ResponseMap};
use kmc::KmcError;
use rand::Rng;

#[test]
fn forward_matches_reference_arithmetic() {
    let mut rng = rng(10);
    for seed in 0..3 {
        let net = random_net(&mut rng, 4, 32, 48, seed);
        let stack = random_stack(&mut rng, 4, 32, 48);
        let (trace, _) = reference_forward(&net, &net.params, &stack, None);
        let out = decoder_forward(&net, &stack).unwrap();
        assert!((out.0 - trace.out.0).abs() <= 1e-10 && (out.1 - trace.out.1).abs() <= 1e-10);
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = rng(11);
    let net = random_net(&mut rng, 4, 32, 48, 5);
    let stack = random_stack(&mut rng, 4, 32, 48);
    let target = (0.2, -0.1);
    let cache = net.forward_cached(&stack).unwrap();
    let (loss, grads) = decoder_backward(&net, &cache, target);
    assert!(loss > 0.0);
    let fd = frozen_fd_gradient(&net, &stack, target, 1e-3);
    let worst = grads
        .data
        .iter()
        .zip(&fd)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max);
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

#[test]
fn loss_hand_values() {
    assert_eq!(loss_rms((0.1, -0.2), (0.1, -0.2)), 0.0);
    assert!((loss_rms((0.0, 0.0), (0.3, 0.4)) - 0.125f64.sqrt()).abs() < 1e-15);
    assert_eq!(loss_rms((0.3, 0.1), (-0.2, 0.4)), loss_rms((-0.2, 0.4), (0.3, 0.1)));
}

#[test]
fn zero_network_and_output_range() {
    let mut rng = rng(12);
    let stack = random_stack(&mut rng, 3, 32, 48);
    let zero = DecoderNet::zeros(3, 32, 48).unwrap();
    assert_eq!(decoder_forward(&zero, &stack).unwrap(), (0.0, 0.0));
    let mut big = DecoderNet::random(3, 32, 48, 1).unwrap();
    big.params.iter_mut().for_each(|p| *p *= 50.0);
    let (x, y) = decoder_forward(&big, &stack).unwrap();
    assert!(x.abs() < 0.5 && y.abs() < 0.5);
    let wrong = random_stack(&mut rng, 2, 32, 48);
    assert!(matches!(decoder_forward(&zero, &wrong), Err(KmcError::Shape(_))));
}

fn one_hot(rows: usize, cols: usize, r: usize, c: usize, cell: usize) -> ResponseMap {
    let mut data = vec![0.0; rows * cols];
    data[r * cols + c] = 1.0;
    ResponseMap {
        grid: RealGrid::new(rows, cols, data),
        layer_id: 1,
        cell_size: cell,
    }
}

#[test]
fn stacking_maps_shift_to_grid_offset() {
    let g = StackGeometry::default();
    // 16x24 cells of 10 px span the 160x240 patch; a grid cell is 5 px.
    let stack = stack_responses(&[one_hot(16, 24, 2, 3, 10)], &g).unwrap();
    let (cr, cc) = g.center();
    let mut best = 0;
    for (i, v) in stack.data.iter().enumerate() {
        if *v > stack.data[best] {
            best = i;
        }
    }
    let (r, c) = (best / 48, best % 48);
    assert!((r as isize - (cr as isize + 4)).abs() <= 1 && (c as isize - (cc as isize + 6)).abs() <= 1);
}

#[test]
fn stacking_identity_and_constant() {
    let g = StackGeometry::default();
    let mut rng = rng(13);
    let data: Vec<f64> = (0..32 * 48).map(|_| rng.random_range(0.0..2.0)).collect();
    let map = ResponseMap {
        grid: RealGrid::new(32, 48, data.clone()),
        layer_id: 1,
        cell_size: 5,
    };
    let stack = stack_responses(&[map], &g).unwrap();
    let (lo, hi) = data.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    for gr in 0..32 {
        for gc in 0..48 {
            let src = data[((gr + 16) % 32) * 48 + (gc + 24) % 48];
            assert!((stack.data[gr * 48 + gc] - (src - lo) / (hi - lo)).abs() < 1e-12);
        }
    }
    let flat = ResponseMap {
        grid: RealGrid::new(8, 8, vec![0.7; 64]),
        layer_id: 1,
        cell_size: 4,
    };
    assert!(stack_responses(&[flat], &g).unwrap().data.iter().all(|&v| v == 0.0));
}

fn centred_stack(channels: &[Vec<f64>]) -> ResponseStack {
    ResponseStack::new(channels.len(), 32, 48, channels.concat()).unwrap()
}

fn bump(r0: f64, c0: f64) -> Vec<f64> {
    (0..32 * 48)
        .map(|i| {
            let (r, c) = ((i / 48) as f64, (i % 48) as f64);
            (-((r - r0).powi(2) + (c - c0).powi(2)) / 8.0).exp()
        })
        .collect()
}

#[test]
fn maxres_cases() {
    let g = StackGeometry::default();
    assert_eq!(maxres_decode(&centred_stack(&[bump(16.0, 24.0), bump(16.0, 24.0)]), &g), (0.0, 0.0));
    assert_eq!(maxres_decode(&centred_stack(&[bump(16.0, 25.0)]), &g), (5.0, 0.0));

    let channels = [bump(16.0 + 3.0, 24.0 + 5.0), bump(16.0 - 3.0, 24.0 - 5.0)];
    let mean: Vec<f64> = (0..32 * 48).map(|i| 0.5 * (channels[0][i] + channels[1][i])).collect();
    let mut best = 0;
    for i in 0..mean.len() {
        if mean[i] > mean[best] {
            best = i;
        }
    }
    let expected = (((best % 48) as f64 - 24.0) * 5.0, ((best / 48) as f64 - 16.0) * 5.0);
    assert_eq!(maxres_decode(&centred_stack(&channels), &g), expected);
}

fn mean_maxres_error(samples: &[TrainingSample], g: &StackGeometry) -> f64 {
    samples
        .iter()
        .map(|s| {
            let (dx, dy) = maxres_decode(&s.stack, g);
            let (tx, ty) = g.denormalize(s.target.0, s.target.1);
            (dx - tx).hypot(dy - ty)
        })
        .sum::<f64>()
        / samples.len() as f64
}

#[test]
fn deep_jitter_hurts_maxres() {
    let clean = NoiseParams::noiseless(4);
    let mut jittered = clean.clone();
    jittered.jitter_std = vec![0.0, 0.0, 2.0, 2.0];
    let g = clean.geometry;
    let a = mean_maxres_error(&generate_synthetic_samples(1000, &clean, 21), &g);
    let b = mean_maxres_error(&generate_synthetic_samples(1000, &jittered, 21), &g);
    assert!(b > a, "jittered {b} vs clean {a}");
}

fn tiny_constant_set(n: usize) -> Vec<TrainingSample> {
    let mut rng = rng(14);
    let stack = random_stack(&mut rng, 1, 8, 12);
    (0..n)
        .map(|_| TrainingSample {
            stack: stack.clone(),
            target: (0.0, 0.0),
        })
        .collect()
}

#[test]
fn constant_target_is_fitted() {
    let report = train_decoder(&tiny_constant_set(640), &TrainConfig::default()).unwrap();
    assert!(report.validation_rms <= 1e-3, "{}", report.validation_rms);
}

#[test]
fn training_is_reproducible() {
    let samples = generate_synthetic_samples(64, &NoiseParams::default(), 3);
    let cfg = TrainConfig {
        max_epochs: 2,
        ..TrainConfig::default()
    };
    let a = train_decoder(&samples, &cfg).unwrap();
    let b = train_decoder(&samples, &cfg).unwrap();
    assert_eq!(a.net.params, b.net.params);
    let reseeded = train_decoder(&samples, &TrainConfig { seed: 9, ..cfg }).unwrap();
    assert_ne!(a.net.params, reseeded.net.params);
}

#[test]
fn empty_dataset_is_rejected() {
    assert!(matches!(train_decoder(&[], &TrainConfig::default()), Err(KmcError::EmptyDataset)));
}
