//! Two-conv, two-dense decoder with hand-written backpropagation.
//!
//! `conv3x3(16) -> ReLU -> maxpool2 -> conv3x3(32) -> ReLU -> maxpool2 ->
//! dense(64) -> ReLU -> dense(2) -> 0.5 * tanh`. All parameters live in one
//! flat vector in declaration order (conv1 w, b, conv2 w, b, dense1 w, b,
//! head w, b); weights are `[out][in][ky][kx]` and `[out][in]`.

use std::ops::Range;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{loss_rms, ResponseStack};
use crate::{KmcError, Result};

pub const CONV1_FILTERS: usize = 16;
pub const CONV2_FILTERS: usize = 32;
pub const HIDDEN: usize = 64;
pub const OUTPUTS: usize = 2;
const OUTPUT_SCALE: f64 = 0.5;
/// Largest tanh magnitude used; keeps saturated outputs strictly inside the range.
const TANH_LIMIT: f64 = 1.0 - f64::EPSILON;

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub inputs: usize,
    pub rows: usize,
    pub cols: usize,
    pub flat: usize,
    pub conv1_w: Range<usize>,
    pub conv1_b: Range<usize>,
    pub conv2_w: Range<usize>,
    pub conv2_b: Range<usize>,
    pub dense1_w: Range<usize>,
    pub dense1_b: Range<usize>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
    pub total: usize,
}

impl Layout {
    pub fn new(inputs: usize, rows: usize, cols: usize) -> Result<Self> {
        if inputs == 0 || rows < 4 || cols < 4 {
            return Err(KmcError::Shape(format!("decoder input {inputs}x{rows}x{cols} too small")));
        }
        let flat = CONV2_FILTERS * (rows / 4) * (cols / 4);
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let conv1_w = take(CONV1_FILTERS * inputs * 9);
        let conv1_b = take(CONV1_FILTERS);
        let conv2_w = take(CONV2_FILTERS * CONV1_FILTERS * 9);
        let conv2_b = take(CONV2_FILTERS);
        let dense1_w = take(HIDDEN * flat);
        let dense1_b = take(HIDDEN);
        let head_w = take(OUTPUTS * HIDDEN);
        let head_b = take(OUTPUTS);
        Ok(Self {
            inputs,
            rows,
            cols,
            flat,
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            dense1_w,
            dense1_b,
            head_w,
            head_b,
            total: at,
        })
    }

    /// `(out, in, kh, kw)` of each layer in declaration order.
    pub fn layer_shapes(&self) -> [(usize, usize, usize, usize); 4] {
        [
            (CONV1_FILTERS, self.inputs, 3, 3),
            (CONV2_FILTERS, CONV1_FILTERS, 3, 3),
            (HIDDEN, self.flat, 1, 1),
            (OUTPUTS, HIDDEN, 1, 1),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderNet {
    pub layout: Layout,
    pub params: Vec<f64>,
}

/// Gradient of the loss with respect to [`DecoderNet::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub data: Vec<f64>,
}

impl Gradients {
    pub fn zeros(len: usize) -> Self {
        Self { data: vec![0.0; len] }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }
}

/// Activations recorded by the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    a1: Vec<f64>,
    p1: Vec<f64>,
    p1_idx: Vec<u32>,
    a2: Vec<f64>,
    p2: Vec<f64>,
    p2_idx: Vec<u32>,
    h: Vec<f64>,
    t: [f64; OUTPUTS],
    pub output: (f64, f64),
}

impl DecoderNet {
    pub fn zeros(inputs: usize, rows: usize, cols: usize) -> Result<Self> {
        let layout = Layout::new(inputs, rows, cols)?;
        let params = vec![0.0; layout.total];
        Ok(Self { layout, params })
    }

    /// He-normal weights and zero biases from a seeded generator.
    pub fn random(inputs: usize, rows: usize, cols: usize, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(inputs, rows, cols)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        net.init_he(&mut rng);
        Ok(net)
    }

    fn init_he(&mut self, rng: &mut impl Rng) {
        let l = self.layout.clone();
        let blocks = [
            (l.conv1_w.clone(), l.inputs * 9),
            (l.conv2_w.clone(), CONV1_FILTERS * 9),
            (l.dense1_w.clone(), l.flat),
            (l.head_w.clone(), HIDDEN),
        ];
        for (range, fan_in) in blocks {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            for p in &mut self.params[range] {
                *p = normal.sample(rng);
            }
        }
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        (self.layout.inputs, self.layout.rows, self.layout.cols)
    }

    fn check_input(&self, stack: &ResponseStack) -> Result<()> {
        if (stack.channels, stack.rows, stack.cols) != self.input_shape() {
            return Err(KmcError::Shape(format!(
                "stack {}x{}x{} vs decoder input {:?}",
                stack.channels,
                stack.rows,
                stack.cols,
                self.input_shape()
            )));
        }
        Ok(())
    }

    pub fn forward_cached(&self, stack: &ResponseStack) -> Result<ForwardCache> {
        self.check_input(stack)?;
        let l = &self.layout;
        let p = &self.params;
        let (rows, cols) = (l.rows, l.cols);
        let (r1, c1) = (rows / 2, cols / 2);

        let mut a1 = vec![0.0; CONV1_FILTERS * rows * cols];
        conv3x3_forward(&stack.data, l.inputs, rows, cols, &p[l.conv1_w.clone()], &p[l.conv1_b.clone()], &mut a1);
        relu_in_place(&mut a1);
        let (p1, p1_idx) = maxpool2(&a1, CONV1_FILTERS, rows, cols);

        let mut a2 = vec![0.0; CONV2_FILTERS * r1 * c1];
        conv3x3_forward(&p1, CONV1_FILTERS, r1, c1, &p[l.conv2_w.clone()], &p[l.conv2_b.clone()], &mut a2);
        relu_in_place(&mut a2);
        let (p2, p2_idx) = maxpool2(&a2, CONV2_FILTERS, r1, c1);

        let w1 = &p[l.dense1_w.clone()];
        let b1 = &p[l.dense1_b.clone()];
        let h: Vec<f64> = (0..HIDDEN)
            .map(|j| (b1[j] + dot(&w1[j * l.flat..(j + 1) * l.flat], &p2)).max(0.0))
            .collect();

        let wh = &p[l.head_w.clone()];
        let bh = &p[l.head_b.clone()];
        let mut t = [0.0; OUTPUTS];
        for (o, tv) in t.iter_mut().enumerate() {
            *tv = (bh[o] + dot(&wh[o * HIDDEN..(o + 1) * HIDDEN], &h)).tanh().clamp(-TANH_LIMIT, TANH_LIMIT);
        }
        Ok(ForwardCache {
            input: stack.data.clone(),
            a1,
            p1,
            p1_idx,
            a2,
            p2,
            p2_idx,
            h,
            t,
            output: (OUTPUT_SCALE * t[0], OUTPUT_SCALE * t[1]),
        })
    }

    /// Accumulates into `grads` the parameter gradient for an upstream
    /// gradient `d_out` on the two outputs.
    pub fn backward(&self, cache: &ForwardCache, d_out: (f64, f64), grads: &mut Gradients) {
        let l = &self.layout;
        let p = &self.params;
        let g = &mut grads.data;
        let (rows, cols) = (l.rows, l.cols);
        let (r1, c1) = (rows / 2, cols / 2);

        let d_z = [
            d_out.0 * OUTPUT_SCALE * (1.0 - cache.t[0] * cache.t[0]),
            d_out.1 * OUTPUT_SCALE * (1.0 - cache.t[1] * cache.t[1]),
        ];
        let wh = &p[l.head_w.clone()];
        let mut d_h = [0.0; HIDDEN];
        for (o, &dz) in d_z.iter().enumerate() {
            g[l.head_b.start + o] += dz;
            let gw = &mut g[l.head_w.start + o * HIDDEN..l.head_w.start + (o + 1) * HIDDEN];
            axpy(gw, dz, &cache.h);
            axpy(&mut d_h, dz, &wh[o * HIDDEN..(o + 1) * HIDDEN]);
        }

        let w1 = &p[l.dense1_w.clone()];
        let mut d_p2 = vec![0.0; l.flat];
        for j in 0..HIDDEN {
            if cache.h[j] <= 0.0 {
                continue;
            }
            let dj = d_h[j];
            g[l.dense1_b.start + j] += dj;
            let start = l.dense1_w.start + j * l.flat;
            axpy(&mut g[start..start + l.flat], dj, &cache.p2);
            axpy(&mut d_p2, dj, &w1[j * l.flat..(j + 1) * l.flat]);
        }

        let mut d_a2 = vec![0.0; CONV2_FILTERS * r1 * c1];
        unpool(&d_p2, &cache.p2_idx, &mut d_a2);
        mask_relu(&mut d_a2, &cache.a2);
        let mut d_p1 = vec![0.0; CONV1_FILTERS * r1 * c1];
        {
            let (gw, gb) = split_pair(g, &l.conv2_w, &l.conv2_b);
            conv3x3_backward(
                &cache.p1,
                CONV1_FILTERS,
                r1,
                c1,
                &p[l.conv2_w.clone()],
                &d_a2,
                gw,
                gb,
                Some(&mut d_p1),
            );
        }

        let mut d_a1 = vec![0.0; CONV1_FILTERS * rows * cols];
        unpool(&d_p1, &cache.p1_idx, &mut d_a1);
        mask_relu(&mut d_a1, &cache.a1);
        let (gw, gb) = split_pair(g, &l.conv1_w, &l.conv1_b);
        conv3x3_backward(&cache.input, l.inputs, rows, cols, &p[l.conv1_w.clone()], &d_a1, gw, gb, None);
    }
}

/// Decoded normalised translation `(dx_n, dy_n)`.
pub fn decoder_forward(net: &DecoderNet, stack: &ResponseStack) -> Result<(f64, f64)> {
    Ok(net.forward_cached(stack)?.output)
}

/// RMS loss against `target` and its exact parameter gradient. A zero loss
/// yields zero gradients.
pub fn decoder_backward(net: &DecoderNet, cache: &ForwardCache, target: (f64, f64)) -> (f64, Gradients) {
    let mut grads = Gradients::zeros(net.params.len());
    let loss = accumulate_loss_gradient(net, cache, target, &mut grads);
    (loss, grads)
}

pub(super) fn accumulate_loss_gradient(
    net: &DecoderNet,
    cache: &ForwardCache,
    target: (f64, f64),
    grads: &mut Gradients,
) -> f64 {
    let loss = loss_rms(cache.output, target);
    if loss > 0.0 {
        let k = 0.5 / loss;
        let d_out = (k * (cache.output.0 - target.0), k * (cache.output.1 - target.1));
        net.backward(cache, d_out, grads);
    }
    loss
}

fn split_pair<'a>(g: &'a mut [f64], w: &Range<usize>, b: &Range<usize>) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert_eq!(w.end, b.start);
    let (head, tail) = g[w.start..b.end].split_at_mut(w.len());
    (head, tail)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

fn mask_relu(grad: &mut [f64], activated: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Valid row/column ranges for kernel offset `k - 1` on an axis of length `n`.
#[inline]
fn tap_range(k: usize, n: usize) -> (usize, usize, isize) {
    let d = k as isize - 1;
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize) as usize;
    (lo, hi, d)
}

/// 3x3 convolution, stride 1, zero padding 1.
fn conv3x3_forward(input: &[f64], cin: usize, rows: usize, cols: usize, w: &[f64], b: &[f64], out: &mut [f64]) {
    let plane = rows * cols;
    for (o, out_p) in out.chunks_exact_mut(plane).enumerate() {
        out_p.fill(b[o]);
        for i in 0..cin {
            let in_p = &input[i * plane..(i + 1) * plane];
            let wk = &w[(o * cin + i) * 9..(o * cin + i + 1) * 9];
            for ky in 0..3 {
                let (r_lo, r_hi, dy) = tap_range(ky, rows);
                for kx in 0..3 {
                    let wv = wk[ky * 3 + kx];
                    let (c_lo, c_hi, dx) = tap_range(kx, cols);
                    let width = c_hi - c_lo;
                    for r in r_lo..r_hi {
                        let src_row = (r as isize + dy) as usize;
                        let src_start = src_row * cols + (c_lo as isize + dx) as usize;
                        axpy(
                            &mut out_p[r * cols + c_lo..r * cols + c_hi],
                            wv,
                            &in_p[src_start..src_start + width],
                        );
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    cin: usize,
    rows: usize,
    cols: usize,
    w: &[f64],
    d_out: &[f64],
    g_w: &mut [f64],
    g_b: &mut [f64],
    mut d_in: Option<&mut [f64]>,
) {
    let plane = rows * cols;
    for (o, d_p) in d_out.chunks_exact(plane).enumerate() {
        g_b[o] += d_p.iter().sum::<f64>();
        for i in 0..cin {
            let in_p = &input[i * plane..(i + 1) * plane];
            let base = (o * cin + i) * 9;
            for ky in 0..3 {
                let (r_lo, r_hi, dy) = tap_range(ky, rows);
                for kx in 0..3 {
                    let (c_lo, c_hi, dx) = tap_range(kx, cols);
                    let width = c_hi - c_lo;
                    let mut acc = 0.0;
                    for r in r_lo..r_hi {
                        let src_row = (r as isize + dy) as usize;
                        let src_start = src_row * cols + (c_lo as isize + dx) as usize;
                        acc += dot(&d_p[r * cols + c_lo..r * cols + c_hi], &in_p[src_start..src_start + width]);
                    }
                    g_w[base + ky * 3 + kx] += acc;
                    if let Some(d_in) = d_in.as_deref_mut() {
                        let wv = w[base + ky * 3 + kx];
                        let d_in_p = &mut d_in[i * plane..(i + 1) * plane];
                        for r in r_lo..r_hi {
                            let src_row = (r as isize + dy) as usize;
                            let src_start = src_row * cols + (c_lo as isize + dx) as usize;
                            axpy(
                                &mut d_in_p[src_start..src_start + width],
                                wv,
                                &d_p[r * cols + c_lo..r * cols + c_hi],
                            );
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 max pooling, stride 2; ties keep the first candidate in scan order.
/// Returns pooled values and the flat source index of each winner.
fn maxpool2(input: &[f64], channels: usize, rows: usize, cols: usize) -> (Vec<f64>, Vec<u32>) {
    let (pr, pc) = (rows / 2, cols / 2);
    let mut out = Vec::with_capacity(channels * pr * pc);
    let mut idx = Vec::with_capacity(channels * pr * pc);
    for ch in 0..channels {
        let base = ch * rows * cols;
        for r in 0..pr {
            for c in 0..pc {
                let top = base + 2 * r * cols + 2 * c;
                let mut best = top;
                for cand in [top + 1, top + cols, top + cols + 1] {
                    if input[cand] > input[best] {
                        best = cand;
                    }
                }
                out.push(input[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

fn unpool(d_pooled: &[f64], idx: &[u32], d_in: &mut [f64]) {
    for (&d, &i) in d_pooled.iter().zip(idx) {
        d_in[i as usize] += d;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(seed: u64) -> ResponseStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..4 * 32 * 48).map(|_| rng.random::<f64>()).collect();
        ResponseStack::new(4, 32, 48, data).unwrap()
    }

    #[test]
    fn layout_sizes() {
        let l = Layout::new(4, 32, 48).unwrap();
        assert_eq!(l.flat, 32 * 8 * 12);
        assert_eq!(l.total, 16 * 36 + 16 + 32 * 144 + 32 + 64 * 3072 + 64 + 128 + 2);
        assert!(Layout::new(4, 3, 48).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = DecoderNet::zeros(4, 32, 48).unwrap();
        assert_eq!(decoder_forward(&net, &stack(1)).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn forward_is_deterministic_and_bounded() {
        let net = DecoderNet::random(4, 32, 48, 3).unwrap();
        let s = stack(2);
        let a = decoder_forward(&net, &s).unwrap();
        let b = decoder_forward(&net, &s).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
        assert!(a.0.abs() < 0.5 && a.1.abs() < 0.5);
    }

    #[test]
    fn shape_mismatch() {
        let net = DecoderNet::zeros(3, 32, 48).unwrap();
        assert!(matches!(decoder_forward(&net, &stack(1)), Err(KmcError::Shape(_))));
    }

    #[test]
    fn zero_loss_gives_zero_gradient() {
        let net = DecoderNet::random(4, 32, 48, 5).unwrap();
        let cache = net.forward_cached(&stack(4)).unwrap();
        let (loss, grads) = decoder_backward(&net, &cache, cache.output);
        assert_eq!(loss, 0.0);
        assert!(grads.data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_is_linear_in_upstream() {
        let net = DecoderNet::random(4, 32, 48, 6).unwrap();
        let cache = net.forward_cached(&stack(7)).unwrap();
        let mut g1 = Gradients::zeros(net.params.len());
        let mut g3 = Gradients::zeros(net.params.len());
        net.backward(&cache, (0.2, -0.7), &mut g1);
        net.backward(&cache, (0.6, -2.1), &mut g3);
        for (a, b) in g1.data.iter().zip(&g3.data) {
            assert!((3.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}
