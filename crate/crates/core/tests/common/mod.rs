//! Straightforward reference implementations used as test oracles. Nothing
//! here calls into the FFT or decoder code paths of the library.
#![allow(dead_code)]

use kmc::decoder::{DecoderNet, ResponseStack, CONV1_FILTERS, CONV2_FILTERS, HIDDEN};
use kmc::features::FeatureMap;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_map(rng: &mut ChaCha8Rng, d: usize, m: usize, n: usize) -> FeatureMap {
    let data = (0..d * m * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureMap::new(d, m, n, data, 1, 1).unwrap()
}

/// Random map scaled to unit Frobenius norm.
pub fn random_unit_map(rng: &mut ChaCha8Rng, d: usize, m: usize, n: usize) -> FeatureMap {
    let mut fm = random_map(rng, d, m, n);
    let norm = fm.norm_sq().sqrt();
    fm.data_mut().iter_mut().for_each(|v| *v /= norm);
    fm
}

/// Textbook `O((MN)^2)` inverse DFT of one channel, scaled by `1 / MN`.
pub fn naive_idft2(x: &[Complex64], m: usize, n: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); m * n];
    for r in 0..m {
        for c in 0..n {
            let mut acc = Complex64::default();
            for u in 0..m {
                for v in 0..n {
                    let phase = 2.0 * std::f64::consts::PI * ((u * r) as f64 / m as f64 + (v * c) as f64 / n as f64);
                    acc += x[u * n + v] * Complex64::from_polar(1.0, phase);
                }
            }
            out[r * n + c] = acc / (m * n) as f64;
        }
    }
    out
}

/// `x` read at `(r + dr, c + dc)` with wrap-around.
fn at(x: &FeatureMap, d: usize, r: isize, c: isize) -> f64 {
    let (m, n) = (x.rows() as isize, x.cols() as isize);
    x.get(d, r.rem_euclid(m) as usize, c.rem_euclid(n) as usize)
}

/// Ridge regression with every cyclic shift of a one-channel map as a row:
/// row `s` holds `x[s - p]` in column `p`.
pub fn dense_circulant_ridge(x: &FeatureMap, y: &[f64], lambda: f64) -> Vec<f64> {
    let (m, n) = (x.rows(), x.cols());
    let size = m * n;
    let c = DMatrix::from_fn(size, size, |s, p| {
        let (sr, sc) = ((s / n) as isize, (s % n) as isize);
        let (pr, pc) = ((p / n) as isize, (p % n) as isize);
        at(x, 0, sr - pr, sc - pc)
    });
    let a = c.transpose() * &c + DMatrix::identity(size, size) * lambda;
    let b = c.transpose() * DVector::from_column_slice(y);
    a.lu().solve(&b).expect("ridge system is regular").iter().copied().collect()
}

/// Squared distance between `x` advanced by `s` and `z` advanced by `t`.
fn shifted_distance(x: &FeatureMap, s: (isize, isize), z: &FeatureMap, t: (isize, isize)) -> f64 {
    let mut acc = 0.0;
    for d in 0..x.channels() {
        for r in 0..x.rows() as isize {
            for c in 0..x.cols() as isize {
                let diff = at(x, d, r + s.0, c + s.1) - at(z, d, r + t.0, c + t.1);
                acc += diff * diff;
            }
        }
    }
    acc
}

/// `k[u] = exp(-|x - z(. + u)|^2 / sigma)` for every cyclic shift `u`.
pub fn all_shift_rbf(x: &FeatureMap, z: &FeatureMap, sigma: f64) -> Vec<f64> {
    let (m, n) = (x.rows(), x.cols());
    let mut out = Vec::with_capacity(m * n);
    for r in 0..m as isize {
        for c in 0..n as isize {
            out.push((-shifted_distance(x, (0, 0), z, (r, c)) / sigma).exp());
        }
    }
    out
}

/// Kernel ridge regression over the cyclic shifts of `x`, evaluated on every
/// cyclic shift of `z`. Sample `s` is `x` advanced by `s` with label `y[s]`.
pub fn dense_kernel_ridge_response(x: &FeatureMap, y: &[f64], z: &FeatureMap, sigma: f64, lambda: f64) -> Vec<f64> {
    let (m, n) = (x.rows(), x.cols());
    let size = m * n;
    let shift = |i: usize| ((i / n) as isize, (i % n) as isize);
    let k = DMatrix::from_fn(size, size, |s, t| (-shifted_distance(x, shift(s), x, shift(t)) / sigma).exp());
    let alpha = (k + DMatrix::identity(size, size) * lambda)
        .lu()
        .solve(&DVector::from_column_slice(y))
        .expect("kernel system is regular");
    (0..size)
        .map(|t| {
            (0..size)
                .map(|s| alpha[s] * (-shifted_distance(x, shift(s), z, shift(t)) / sigma).exp())
                .sum()
        })
        .collect()
}

/// Activation pattern of one forward pass: which ReLUs fired and which
/// input won each pooling window.
#[derive(Debug, Clone)]
pub struct Pattern {
    pub relu1: Vec<bool>,
    pub pool1: Vec<usize>,
    pub relu2: Vec<bool>,
    pub pool2: Vec<usize>,
    pub relu3: Vec<bool>,
}

/// Intermediate values of the reference forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub z1: Vec<f64>,
    pub p1: Vec<f64>,
    pub z2: Vec<f64>,
    pub p2: Vec<f64>,
    pub z3: Vec<f64>,
    pub out: (f64, f64),
}

/// Independent view of the flat parameter vector.
pub struct Params<'a> {
    pub k: usize,
    pub rows: usize,
    pub cols: usize,
    p: &'a [f64],
    net: &'a DecoderNet,
}

impl<'a> Params<'a> {
    pub fn new(net: &'a DecoderNet, p: &'a [f64]) -> Self {
        let (k, rows, cols) = net.input_shape();
        Self { k, rows, cols, p, net }
    }
    fn c1w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.p[self.net.layout.conv1_w.start + ((o * self.k + i) * 3 + ky) * 3 + kx]
    }
    fn c1b(&self, o: usize) -> f64 {
        self.p[self.net.layout.conv1_b.start + o]
    }
    fn c2w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.p[self.net.layout.conv2_w.start + ((o * CONV1_FILTERS + i) * 3 + ky) * 3 + kx]
    }
    fn c2b(&self, o: usize) -> f64 {
        self.p[self.net.layout.conv2_b.start + o]
    }
    fn d1w(&self, j: usize, i: usize) -> f64 {
        self.p[self.net.layout.dense1_w.start + j * self.net.layout.flat + i]
    }
    fn d1b(&self, j: usize) -> f64 {
        self.p[self.net.layout.dense1_b.start + j]
    }
    fn hw(&self, o: usize, j: usize) -> f64 {
        self.p[self.net.layout.head_w.start + o * HIDDEN + j]
    }
    fn hb(&self, o: usize) -> f64 {
        self.p[self.net.layout.head_b.start + o]
    }
}

fn conv_channel(
    input: &[f64],
    cin: usize,
    rows: usize,
    cols: usize,
    weight: impl Fn(usize, usize, usize) -> f64,
    bias: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = bias;
            for i in 0..cin {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (sr, sc) = (r as isize + ky as isize - 1, c as isize + kx as isize - 1);
                        if sr < 0 || sc < 0 || sr >= rows as isize || sc >= cols as isize {
                            continue;
                        }
                        acc += weight(i, ky, kx) * input[(i * rows + sr as usize) * cols + sc as usize];
                    }
                }
            }
            out[r * cols + c] = acc;
        }
    }
    out
}

fn conv1_channel(p: &Params, input: &[f64], o: usize) -> Vec<f64> {
    conv_channel(input, p.k, p.rows, p.cols, |i, ky, kx| p.c1w(o, i, ky, kx), p.c1b(o))
}

fn conv2_channel(p: &Params, input: &[f64], o: usize) -> Vec<f64> {
    conv_channel(input, CONV1_FILTERS, p.rows / 2, p.cols / 2, |i, ky, kx| p.c2w(o, i, ky, kx), p.c2b(o))
}

/// 2x2 pooling; each window keeps the first maximum in scan order.
fn pool_winners(x: &[f64], channels: usize, rows: usize, cols: usize) -> Vec<usize> {
    let mut idx = Vec::new();
    for ch in 0..channels {
        for r in 0..rows / 2 {
            for c in 0..cols / 2 {
                let cands = [(2 * r, 2 * c), (2 * r, 2 * c + 1), (2 * r + 1, 2 * c), (2 * r + 1, 2 * c + 1)];
                let flat: Vec<usize> = cands.iter().map(|&(a, b)| (ch * rows + a) * cols + b).collect();
                let mut best = flat[0];
                for &f in &flat[1..] {
                    if x[f] > x[best] {
                        best = f;
                    }
                }
                idx.push(best);
            }
        }
    }
    idx
}

fn gate(z: &[f64], mask: &[bool]) -> Vec<f64> {
    z.iter().zip(mask).map(|(&v, &m)| if m { v } else { 0.0 }).collect()
}

fn gather(x: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| x[i]).collect()
}

fn dense1_unit(p: &Params, p2: &[f64], j: usize) -> f64 {
    p.d1b(j) + p2.iter().enumerate().map(|(i, v)| p.d1w(j, i) * v).sum::<f64>()
}

fn head(p: &Params, z3: &[f64], relu3: &[bool]) -> (f64, f64) {
    let h = gate(z3, relu3);
    let t = |o: usize| 0.5 * (p.hb(o) + (0..HIDDEN).map(|j| p.hw(o, j) * h[j]).sum::<f64>()).tanh();
    (t(0), t(1))
}

/// Plain forward pass. With `pattern` the ReLU gates and pooling winners
/// are taken from it instead of from the current values.
pub fn reference_forward(net: &DecoderNet, params: &[f64], stack: &ResponseStack, pattern: Option<&Pattern>) -> (Trace, Pattern) {
    let p = Params::new(net, params);
    let (rows, cols) = (p.rows, p.cols);
    let z1: Vec<f64> = (0..CONV1_FILTERS).flat_map(|o| conv1_channel(&p, &stack.data, o)).collect();
    let relu1 = pattern.map_or_else(|| z1.iter().map(|&v| v > 0.0).collect(), |q| q.relu1.clone());
    let a1 = gate(&z1, &relu1);
    let pool1 = pattern.map_or_else(|| pool_winners(&a1, CONV1_FILTERS, rows, cols), |q| q.pool1.clone());
    let p1 = gather(&a1, &pool1);
    let z2: Vec<f64> = (0..CONV2_FILTERS).flat_map(|o| conv2_channel(&p, &p1, o)).collect();
    let relu2 = pattern.map_or_else(|| z2.iter().map(|&v| v > 0.0).collect(), |q| q.relu2.clone());
    let a2 = gate(&z2, &relu2);
    let pool2 = pattern.map_or_else(|| pool_winners(&a2, CONV2_FILTERS, rows / 2, cols / 2), |q| q.pool2.clone());
    let p2 = gather(&a2, &pool2);
    let z3: Vec<f64> = (0..HIDDEN).map(|j| dense1_unit(&p, &p2, j)).collect();
    let relu3 = pattern.map_or_else(|| z3.iter().map(|&v| v > 0.0).collect(), |q| q.relu3.clone());
    let out = head(&p, &z3, &relu3);
    let pat = Pattern {
        relu1,
        pool1,
        relu2,
        pool2,
        relu3,
    };
    (Trace { z1, p1, z2, p2, z3, out }, pat)
}

pub fn rms(out: (f64, f64), target: (f64, f64)) -> f64 {
    (0.5 * ((out.0 - target.0).powi(2) + (out.1 - target.1).powi(2))).sqrt()
}

/// Loss with parameter `idx` replaced by `value`, activation pattern held
/// fixed. Only the part of the network downstream of the parameter is
/// recomputed; everything upstream is taken from `base`.
fn frozen_loss(net: &DecoderNet, params: &mut [f64], idx: usize, value: f64, base: &Trace, pat: &Pattern, stack: &ResponseStack, target: (f64, f64)) -> f64 {
    let old = params[idx];
    params[idx] = value;
    let l = net.layout.clone();
    let p = Params::new(net, params);
    let (rows, cols) = (p.rows, p.cols);
    let plane1 = rows * cols;
    let plane2 = plane1 / 4;

    let from_p2 = |p2: &[f64]| -> (f64, f64) {
        let z3: Vec<f64> = (0..HIDDEN).map(|j| dense1_unit(&p, p2, j)).collect();
        head(&p, &z3, &pat.relu3)
    };
    let from_z2 = |z2: &[f64]| from_p2(&gather(&gate(z2, &pat.relu2), &pat.pool2));

    let out = if l.conv1_w.contains(&idx) || l.conv1_b.contains(&idx) {
        let o = if l.conv1_b.contains(&idx) {
            idx - l.conv1_b.start
        } else {
            (idx - l.conv1_w.start) / (p.k * 9)
        };
        let mut z1 = base.z1.clone();
        z1[o * plane1..(o + 1) * plane1].copy_from_slice(&conv1_channel(&p, &stack.data, o));
        let p1 = gather(&gate(&z1, &pat.relu1), &pat.pool1);
        let z2: Vec<f64> = (0..CONV2_FILTERS).flat_map(|o| conv2_channel(&p, &p1, o)).collect();
        from_z2(&z2)
    } else if l.conv2_w.contains(&idx) || l.conv2_b.contains(&idx) {
        let o = if l.conv2_b.contains(&idx) {
            idx - l.conv2_b.start
        } else {
            (idx - l.conv2_w.start) / (CONV1_FILTERS * 9)
        };
        let mut z2 = base.z2.clone();
        z2[o * plane2..(o + 1) * plane2].copy_from_slice(&conv2_channel(&p, &base.p1, o));
        from_z2(&z2)
    } else if l.dense1_w.contains(&idx) || l.dense1_b.contains(&idx) {
        let j = if l.dense1_b.contains(&idx) {
            idx - l.dense1_b.start
        } else {
            (idx - l.dense1_w.start) / l.flat
        };
        let mut z3 = base.z3.clone();
        z3[j] = dense1_unit(&p, &base.p2, j);
        head(&p, &z3, &pat.relu3)
    } else {
        head(&p, &base.z3, &pat.relu3)
    };
    params[idx] = old;
    rms(out, target)
}

/// Central finite-difference gradient of the RMS loss for every parameter,
/// with the activation pattern of the unperturbed pass held fixed so no
/// difference straddles a ReLU or pooling kink.
pub fn frozen_fd_gradient(net: &DecoderNet, stack: &ResponseStack, target: (f64, f64), eps: f64) -> Vec<f64> {
    let (base, pat) = reference_forward(net, &net.params, stack, None);
    let mut params = net.params.clone();
    (0..params.len())
        .map(|i| {
            let v = params[i];
            let up = frozen_loss(net, &mut params, i, v + eps, &base, &pat, stack, target);
            let down = frozen_loss(net, &mut params, i, v - eps, &base, &pat, stack, target);
            (up - down) / (2.0 * eps)
        })
        .collect()
}

pub fn random_stack(rng: &mut ChaCha8Rng, k: usize, rows: usize, cols: usize) -> ResponseStack {
    let data = (0..k * rows * cols).map(|_| rng.random_range(0.0..1.0)).collect();
    ResponseStack::new(k, rows, cols, data).unwrap()
}

/// Net with random weights and biases, so every parameter block matters.
pub fn random_net(rng: &mut ChaCha8Rng, k: usize, rows: usize, cols: usize, seed: u64) -> DecoderNet {
    let mut net = DecoderNet::random(k, rows, cols, seed).unwrap();
    let l = net.layout.clone();
    for r in [l.conv1_b, l.conv2_b, l.dense1_b, l.head_b] {
        for v in &mut net.params[r] {
            *v = rng.random_range(-0.1..0.1);
        }
    }
    net
}
