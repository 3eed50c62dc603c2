use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::net::accumulate_loss_gradient;
use super::{loss_rms, maxres_decode, DecoderNet, Gradients, StackGeometry, TrainingSample};
use crate::{KmcError, Result};

/// Samples per gradient chunk; chunk sums are reduced in index order so the
/// result does not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_improvement: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            min_improvement: 1e-4,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_rms: f64,
    pub validation_rms: f64,
    pub best_validation_rms: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub net: DecoderNet,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub train_rms: f64,
    pub validation_rms: f64,
    /// Indices of the samples held out for validation.
    pub validation_indices: Vec<usize>,
}

/// Mean per-sample RMS loss of `net` over `samples`.
pub fn evaluate_rms(net: &DecoderNet, samples: &[&TrainingSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(KmcError::EmptyDataset);
    }
    let losses = samples
        .par_iter()
        .map(|s| Ok(loss_rms(net.forward_cached(&s.stack)?.output, s.target)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mean per-sample RMS loss of the MaxRes decoder in normalised units.
pub fn maxres_rms(samples: &[&TrainingSample], geometry: &StackGeometry) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|s| {
            let (dx, dy) = maxres_decode(&s.stack, geometry);
            loss_rms(geometry.normalize(dx, dy), s.target)
        })
        .sum();
    total / samples.len().max(1) as f64
}

fn batch_gradient(net: &DecoderNet, batch: &[&TrainingSample]) -> Result<(f64, Gradients)> {
    let partials = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = Gradients::zeros(net.params.len());
            let mut loss = 0.0;
            for s in chunk {
                let cache = net.forward_cached(&s.stack)?;
                loss += accumulate_loss_gradient(net, &cache, s.target, &mut g);
            }
            Ok((loss, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = Gradients::zeros(net.params.len());
    let mut loss = 0.0;
    for (l, g) in &partials {
        loss += l;
        total.add(g);
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(inv);
    Ok((loss * inv, total))
}

/// Mini-batch SGD with momentum and early stopping on validation RMS.
///
/// The samples are shuffled with `config.seed` and split into disjoint
/// training and validation sets; the returned network carries the weights of
/// the best validation epoch.
pub fn train_decoder(samples: &[TrainingSample], config: &TrainConfig) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(KmcError::EmptyDataset);
    }
    if samples.len() < 2 {
        return Err(KmcError::InvalidParameter(
            "need at least two samples for a disjoint train/validation split".into(),
        ));
    }
    if config.batch_size == 0 {
        return Err(KmcError::InvalidParameter("batch size 0".into()));
    }
    let first = &samples[0].stack;
    let shape = (first.channels, first.rows, first.cols);
    if samples.iter().any(|s| (s.stack.channels, s.stack.rows, s.stack.cols) != shape) {
        return Err(KmcError::Shape("samples differ in stack shape".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((samples.len() as f64 * config.validation_fraction).round() as usize).clamp(1, samples.len() - 1);
    let validation_indices = order[..n_val].to_vec();
    let validation: Vec<&TrainingSample> = validation_indices.iter().map(|&i| &samples[i]).collect();
    let mut train: Vec<&TrainingSample> = order[n_val..].iter().map(|&i| &samples[i]).collect();

    let mut net = DecoderNet::random(shape.0, shape.1, shape.2, config.seed.wrapping_add(1))?;
    let mut velocity = vec![0.0; net.params.len()];
    let mut best_net = net.clone();
    let mut best_val = evaluate_rms(&net, &validation)?;
    let mut best_epoch = 0;
    let mut best_train = f64::NAN;
    let mut stale = 0;
    let mut history = Vec::new();

    for epoch in 1..=config.max_epochs {
        train.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in train.chunks(config.batch_size) {
            let (loss, grads) = batch_gradient(&net, batch)?;
            epoch_loss += loss * batch.len() as f64;
            for ((p, v), g) in net.params.iter_mut().zip(&mut velocity).zip(&grads.data) {
                *v = config.momentum * *v - config.learning_rate * g;
                *p += *v;
            }
        }
        let train_rms = epoch_loss / train.len() as f64;
        let val = evaluate_rms(&net, &validation)?;
        if val < best_val - config.min_improvement {
            best_val = val;
            best_net = net.clone();
            best_epoch = epoch;
            best_train = train_rms;
            stale = 0;
        } else {
            stale += 1;
        }
        history.push(EpochRecord {
            epoch,
            train_rms,
            validation_rms: val,
            best_validation_rms: best_val,
        });
        if stale >= config.patience {
            break;
        }
    }
    if best_epoch == 0 {
        best_train = evaluate_rms(&best_net, &train)?;
    }
    Ok(TrainReport {
        net: best_net,
        history,
        best_epoch,
        train_rms: best_train,
        validation_rms: best_val,
        validation_indices,
    })
}
