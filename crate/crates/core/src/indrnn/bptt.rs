//! Backpropagation through time and mini-batch gradient-descent training.
//!
//! The loss is mean binary cross-entropy over every step of every sequence
//! in a batch. Gradients are exact: unrolling the recurrence gives, per
//! layer and step,
//!
//! ```text
//! delta_t = (ext_t + u .* delta_{t+1}) .* [h_t > 0]
//! ```
//!
//! where `ext_t` is the loss gradient arriving from the head or the layer
//! above, and `[h_t > 0]` is the ReLU derivative (taken as 0 at exactly 0).
//! The head combines the logistic and the cross-entropy analytically, so its
//! per-step contribution is `(sigmoid(z_t) - y_t) / N`.
//!
//! All reductions run in a fixed order (batch order, then step order), so
//! gradients and trained parameters are bit-reproducible per seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    clip_recurrent, encode_rows, forward_states, IndRnnError, IndRnnNetwork, TrainConfig,
};
use crate::imaging::{GrayImage, LabelMask};

/// One training sequence: per-step input vectors and binary targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSequence {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

/// Gradients for one layer, shaped exactly like the layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
}

/// Gradients for every parameter of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
    pub head_v: Vec<f64>,
    pub head_c: f64,
}

impl Gradients {
    fn zeros_like(net: &IndRnnNetwork) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerGradients {
                    w: vec![0.0; l.w().len()],
                    u: vec![0.0; l.units()],
                    b: vec![0.0; l.units()],
                })
                .collect(),
            head_v: vec![0.0; net.head().v().len()],
            head_c: 0.0,
        }
    }

    /// Flatten in the same order as [`IndRnnNetwork::params_flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for layer in &self.layers {
            flat.extend_from_slice(&layer.w);
            flat.extend_from_slice(&layer.u);
            flat.extend_from_slice(&layer.b);
        }
        flat.extend_from_slice(&self.head_v);
        flat.push(self.head_c);
        flat
    }
}

/// Unclamped logistic; the clamp used for reported probabilities would make
/// the analytic gradient disagree with the loss at extreme logits.
#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of the logistic at logit `z` against target `y`,
/// in the overflow-free softplus form.
#[inline]
fn bce(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

fn check_batch(net: &IndRnnNetwork, batch: &[&TrainingSequence]) -> Result<usize, IndRnnError> {
    if batch.is_empty() {
        return Err(IndRnnError::EmptyTrainingSet);
    }
    let dim = net.input_dim();
    let mut steps = 0usize;
    for seq in batch {
        if seq.inputs.is_empty() {
            return Err(IndRnnError::InvalidParam(
                "sequence must have at least one step".to_string(),
            ));
        }
        if seq.targets.len() != seq.inputs.len() {
            return Err(IndRnnError::DimensionMismatch(format!(
                "{} targets for {} steps",
                seq.targets.len(),
                seq.inputs.len()
            )));
        }
        if seq.inputs.iter().any(|x| x.len() != dim) {
            return Err(IndRnnError::DimensionMismatch(format!(
                "input vectors must have {dim} entries"
            )));
        }
        if seq.targets.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(IndRnnError::InvalidParam(
                "targets must be exactly 0 or 1".to_string(),
            ));
        }
        steps += seq.inputs.len();
    }
    Ok(steps)
}

/// Mean binary cross-entropy of the network over a batch, without gradients.
pub fn batch_loss(net: &IndRnnNetwork, batch: &[&TrainingSequence]) -> Result<f64, IndRnnError> {
    let total_steps = check_batch(net, batch)?;
    let mut loss = 0.0;
    for seq in batch {
        let (hidden, _) = forward_states(net, &seq.inputs)?;
        let top = hidden.last().expect("at least one layer");
        for (h, &y) in top.iter().zip(&seq.targets) {
            let mut z = net.head().c();
            for (vi, hi) in net.head().v().iter().zip(h) {
                z += vi * hi;
            }
            loss += bce(z, y);
        }
    }
    Ok(loss / total_steps as f64)
}

/// Exact gradients of the mean-BCE loss over a batch, plus the loss itself.
pub fn bptt_gradients(
    net: &IndRnnNetwork,
    batch: &[&TrainingSequence],
) -> Result<(Gradients, f64), IndRnnError> {
    let total_steps = check_batch(net, batch)?;
    let scale = 1.0 / total_steps as f64;
    let mut grads = Gradients::zeros_like(net);
    let mut loss = 0.0;

    for seq in batch {
        let (hidden, _) = forward_states(net, &seq.inputs)?;
        let steps = seq.inputs.len();
        let top = hidden.last().expect("at least one layer");

        // head: dL/dz_t = (sigmoid(z_t) - y_t) / N, then fan out to v, c,
        // and the top layer's hidden states
        let top_units = net.head().v().len();
        let mut ext = vec![vec![0.0; top_units]; steps];
        for t in 0..steps {
            let h = &top[t];
            let mut z = net.head().c();
            for (vi, hi) in net.head().v().iter().zip(h) {
                z += vi * hi;
            }
            let y = seq.targets[t];
            loss += bce(z, y);
            let dz = (sigmoid(z) - y) * scale;
            for (gv, hi) in grads.head_v.iter_mut().zip(h) {
                *gv += dz * hi;
            }
            grads.head_c += dz;
            for (e, vi) in ext[t].iter_mut().zip(net.head().v()) {
                *e = vi * dz;
            }
        }

        // walk the stack top-down, turning each layer's incoming hidden-state
        // gradients into parameter gradients and gradients for the layer below
        for l in (0..net.layers().len()).rev() {
            let layer = &net.layers()[l];
            let (units, dim) = (layer.units(), layer.input_dim());
            let h_seq = &hidden[l];

            let mut delta = vec![vec![0.0; units]; steps];
            for t in (0..steps).rev() {
                for n in 0..units {
                    let mut d = ext[t][n];
                    if t + 1 < steps {
                        d += layer.u()[n] * delta[t + 1][n];
                    }
                    delta[t][n] = if h_seq[t][n] > 0.0 { d } else { 0.0 };
                }
            }

            let lg = &mut grads.layers[l];
            let mut ext_below = vec![vec![0.0; dim]; steps];
            for t in 0..steps {
                let x = if l == 0 {
                    &seq.inputs[t]
                } else {
                    &hidden[l - 1][t]
                };
                for n in 0..units {
                    let d = delta[t][n];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut lg.w[n * dim..(n + 1) * dim];
                    for (gw, xi) in row.iter_mut().zip(x) {
                        *gw += d * xi;
                    }
                    if t > 0 {
                        lg.u[n] += d * h_seq[t - 1][n];
                    }
                    lg.b[n] += d;
                    if l > 0 {
                        let w_row = &net.layers()[l].w()[n * dim..(n + 1) * dim];
                        for (e, wi) in ext_below[t].iter_mut().zip(w_row) {
                            *e += wi * d;
                        }
                    }
                }
            }
            if l > 0 {
                ext = ext_below;
            }
        }
    }

    Ok((grads, loss / total_steps as f64))
}

/// One gradient-descent step: `param -= learning_rate * gradient`.
pub fn apply_gradients(net: &mut IndRnnNetwork, grads: &Gradients, learning_rate: f64) {
    debug_assert_eq!(net.layers().len(), grads.layers.len());
    for (layer, lg) in net.layers.iter_mut().zip(&grads.layers) {
        for (p, g) in layer.w.iter_mut().zip(&lg.w) {
            *p -= learning_rate * g;
        }
        for (p, g) in layer.u.iter_mut().zip(&lg.u) {
            *p -= learning_rate * g;
        }
        for (p, g) in layer.b.iter_mut().zip(&lg.b) {
            *p -= learning_rate * g;
        }
    }
    for (p, g) in net.head.v.iter_mut().zip(&grads.head_v) {
        *p -= learning_rate * g;
    }
    net.head.c -= learning_rate * grads.head_c;
}

/// Mini-batch gradient descent on image/mask pairs.
///
/// Every image row becomes one training sequence; rows are shuffled each
/// epoch from the config's seed, batched, and each update is followed by a
/// recurrent-weight clip with `T` = the widest training image. Returns the
/// per-epoch mean loss (step-weighted over the epoch's batches, measured
/// before each update). Hyperparameter validation is the caller's job —
/// see [`TrainConfig::validate`].
pub fn train(
    net: &mut IndRnnNetwork,
    pairs: &[(GrayImage, LabelMask)],
    config: &TrainConfig,
) -> Result<Vec<f64>, IndRnnError> {
    if pairs.is_empty() {
        return Err(IndRnnError::EmptyTrainingSet);
    }
    let k = config.neighborhood_k;
    if net.input_dim() != k * k {
        return Err(IndRnnError::DimensionMismatch(format!(
            "network input dim {} does not match neighborhood {k}x{k}",
            net.input_dim()
        )));
    }
    if config.batch_size == 0 {
        return Err(IndRnnError::InvalidParam(
            "batch size must be >= 1".to_string(),
        ));
    }

    let mut pool: Vec<TrainingSequence> = Vec::new();
    let mut clip_len = 1usize;
    for (image, mask) in pairs {
        if image.width() != mask.width() || image.height() != mask.height() {
            return Err(IndRnnError::DimensionMismatch(format!(
                "image {}x{} paired with mask {}x{}",
                image.width(),
                image.height(),
                mask.width(),
                mask.height()
            )));
        }
        clip_len = clip_len.max(image.width());
        let rows = encode_rows(image, k)?;
        for (y, inputs) in rows.into_iter().enumerate() {
            let targets = (0..mask.width())
                .map(|x| f64::from(mask.get(x, y)))
                .collect();
            pool.push(TrainingSequence { inputs, targets });
        }
    }
    if pool.is_empty() {
        return Err(IndRnnError::EmptyTrainingSet);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut weighted_loss = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TrainingSequence> = chunk.iter().map(|&i| &pool[i]).collect();
            let (grads, loss) = bptt_gradients(net, &batch)?;
            let batch_steps: usize = batch.iter().map(|s| s.inputs.len()).sum();
            weighted_loss += loss * batch_steps as f64;
            steps += batch_steps;
            apply_gradients(net, &grads, config.learning_rate);
            for layer in &mut net.layers {
                clip_recurrent(layer, config.clip_gamma, clip_len);
            }
        }
        epoch_losses.push(weighted_loss / steps as f64);
    }
    Ok(epoch_losses)
}
