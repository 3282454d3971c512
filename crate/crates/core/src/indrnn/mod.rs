//! Independently recurrent network mapping image rows to per-pixel nodule
//! probabilities.
//!
//! Each layer owns an input matrix `W`, a per-neuron recurrent weight vector
//! `u`, and a bias `b`; the hidden state evolves as
//!
//! ```text
//! h_t = relu(W x_t + u .* h_{t-1} + b)
//! ```
//!
//! where `.*` is the element-wise product — neuron `n` sees only its own
//! previous state `h_{n,t-1}`, never its siblings'. Layers stack by feeding
//! the full hidden sequence of one layer to the next, and a per-step logistic
//! head turns the top layer's states into probabilities.
//!
//! Images become sequences by scanning each row left to right; the input at
//! step `t` is the flattened `k x k` replicate-padded neighborhood of the
//! pixel, so spatial context enters through the features and temporal context
//! through the recurrence. Keeping `|u_n| <= gamma^(1/T)` bounds the `T`-step
//! recurrent amplification by `gamma`, which is what lets deep unrolls train
//! with ReLU (see [`clip_recurrent`]).

pub mod bptt;
pub mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{GrayImage, LabelMask};

#[derive(Debug, Error)]
pub enum IndRnnError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
}

/// Smallest and largest probabilities the logistic head emits. The open
/// interval keeps every log-likelihood finite and makes `binarize` at
/// threshold 1.0 yield an empty mask.
pub const PROB_MIN: f64 = f64::MIN_POSITIVE;
pub const PROB_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Numerically stable logistic squashing, clamped into the open unit
/// interval.
#[inline]
pub(crate) fn logistic(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(PROB_MIN, PROB_MAX)
}

/// One recurrent layer: `units x input_dim` input matrix (row-major), one
/// recurrent weight and one bias per neuron, ReLU activation.
#[derive(Debug, Clone, PartialEq)]
pub struct IndRnnLayer {
    input_dim: usize,
    w: Vec<f64>,
    u: Vec<f64>,
    b: Vec<f64>,
}

impl IndRnnLayer {
    pub fn new(
        input_dim: usize,
        w: Vec<f64>,
        u: Vec<f64>,
        b: Vec<f64>,
    ) -> Result<Self, IndRnnError> {
        let units = u.len();
        if units == 0 || input_dim == 0 {
            return Err(IndRnnError::InvalidParam(
                "layer needs at least one unit and one input".to_string(),
            ));
        }
        if b.len() != units || w.len() != units * input_dim {
            return Err(IndRnnError::DimensionMismatch(format!(
                "layer with {units} units and input dim {input_dim} requires |b| = {units}, \
                 |w| = {}; got |b| = {}, |w| = {}",
                units * input_dim,
                b.len(),
                w.len()
            )));
        }
        for p in w.iter().chain(&u).chain(&b) {
            if !p.is_finite() {
                return Err(IndRnnError::InvalidParam(
                    "layer parameters must be finite".to_string(),
                ));
            }
        }
        Ok(Self { input_dim, w, u, b })
    }

    pub fn units(&self) -> usize {
        self.u.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }
}

/// Per-step affine map plus logistic squashing on the top layer's state.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputHead {
    v: Vec<f64>,
    c: f64,
}

impl OutputHead {
    pub fn new(v: Vec<f64>, c: f64) -> Result<Self, IndRnnError> {
        if v.is_empty() {
            return Err(IndRnnError::InvalidParam(
                "output head needs at least one weight".to_string(),
            ));
        }
        if v.iter().any(|p| !p.is_finite()) || !c.is_finite() {
            return Err(IndRnnError::InvalidParam(
                "output head parameters must be finite".to_string(),
            ));
        }
        Ok(Self { v, c })
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Probability for one hidden state.
    #[inline]
    pub fn prob(&self, h: &[f64]) -> f64 {
        let mut z = self.c;
        for (vi, hi) in self.v.iter().zip(h) {
            z += vi * hi;
        }
        logistic(z)
    }
}

/// Stacked recurrent layers plus the logistic output head.
#[derive(Debug, Clone, PartialEq)]
pub struct IndRnnNetwork {
    layers: Vec<IndRnnLayer>,
    head: OutputHead,
}

impl IndRnnNetwork {
    /// Assemble a network, checking that consecutive layer dimensions chain
    /// and the head matches the top layer.
    pub fn from_parts(layers: Vec<IndRnnLayer>, head: OutputHead) -> Result<Self, IndRnnError> {
        let Some(last) = layers.last() else {
            return Err(IndRnnError::InvalidParam(
                "network needs at least one layer".to_string(),
            ));
        };
        for pair in layers.windows(2) {
            if pair[1].input_dim() != pair[0].units() {
                return Err(IndRnnError::DimensionMismatch(format!(
                    "layer input dim {} does not match previous layer's {} units",
                    pair[1].input_dim(),
                    pair[0].units()
                )));
            }
        }
        if head.v.len() != last.units() {
            return Err(IndRnnError::DimensionMismatch(format!(
                "head expects {} inputs but top layer has {} units",
                head.v.len(),
                last.units()
            )));
        }
        Ok(Self { layers, head })
    }

    /// Randomly initialize a network: input and head weights uniform in
    /// `(-s, s)` with `s = 1/sqrt(fan-in)`, recurrent weights uniform in
    /// `[0, gamma^(1/max_seq_len))`, biases zero. Deterministic per seed.
    pub fn init(
        input_dim: usize,
        units: &[usize],
        clip_gamma: f64,
        max_seq_len: usize,
        seed: u64,
    ) -> Result<Self, IndRnnError> {
        if units.is_empty() {
            return Err(IndRnnError::InvalidParam(
                "network needs at least one layer".to_string(),
            ));
        }
        if !(clip_gamma > 0.0) || max_seq_len == 0 {
            return Err(IndRnnError::InvalidParam(format!(
                "clip gamma must be > 0 and max sequence length >= 1, \
                 got {clip_gamma} and {max_seq_len}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recurrent_bound = clip_gamma.powf(1.0 / max_seq_len as f64);
        let mut layers = Vec::with_capacity(units.len());
        let mut fan_in = input_dim;
        for &n in units {
            if n == 0 || fan_in == 0 {
                return Err(IndRnnError::InvalidParam(
                    "layer sizes must be >= 1".to_string(),
                ));
            }
            let s = 1.0 / (fan_in as f64).sqrt();
            let w = (0..n * fan_in).map(|_| rng.random_range(-s..s)).collect();
            let u = (0..n).map(|_| rng.random_range(0.0..recurrent_bound)).collect();
            layers.push(IndRnnLayer::new(fan_in, w, u, vec![0.0; n])?);
            fan_in = n;
        }
        let s = 1.0 / (fan_in as f64).sqrt();
        let v = (0..fan_in).map(|_| rng.random_range(-s..s)).collect();
        Self::from_parts(layers, OutputHead::new(v, 0.0)?)
    }

    pub fn layers(&self) -> &[IndRnnLayer] {
        &self.layers
    }

    pub fn head(&self) -> &OutputHead {
        &self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    /// All parameters flattened in a fixed order: per layer `W` (row-major),
    /// `u`, `b`; then head `v`, `c`. Pairs with [`Self::set_params_flat`]
    /// and the gradient layout, which is what finite-difference checks key on.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for layer in &self.layers {
            flat.extend_from_slice(&layer.w);
            flat.extend_from_slice(&layer.u);
            flat.extend_from_slice(&layer.b);
        }
        flat.extend_from_slice(&self.head.v);
        flat.push(self.head.c);
        flat
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<(), IndRnnError> {
        let expected = self.params_flat().len();
        if flat.len() != expected {
            return Err(IndRnnError::DimensionMismatch(format!(
                "expected {expected} parameters, got {}",
                flat.len()
            )));
        }
        let mut at = 0;
        let mut take = |n: usize| {
            let slice = &flat[at..at + n];
            at += n;
            slice
        };
        for layer in &mut self.layers {
            let nw = layer.w.len();
            layer.w.copy_from_slice(take(nw));
            let nu = layer.u.len();
            layer.u.copy_from_slice(take(nu));
            let nb = layer.b.len();
            layer.b.copy_from_slice(take(nb));
        }
        let nv = self.head.v.len();
        self.head.v.copy_from_slice(take(nv));
        self.head.c = take(1)[0];
        Ok(())
    }
}

/// Training hyperparameters; the network architecture lives alongside in the
/// pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Bound on the `T`-step recurrent amplification; `|u_n|` is clamped to
    /// `clip_gamma^(1/T)` after every update.
    pub clip_gamma: f64,
    pub seed: u64,
    /// Odd side length of the square pixel neighborhood fed to the network.
    pub neighborhood_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 40,
            batch_size: 16,
            clip_gamma: 2.0,
            seed: 0,
            neighborhood_k: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), IndRnnError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(IndRnnError::InvalidParam(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(IndRnnError::InvalidParam(
                "epochs must be >= 1".to_string(),
            ));
        }
        if self.batch_size == 0 {
            return Err(IndRnnError::InvalidParam(
                "batch size must be >= 1".to_string(),
            ));
        }
        if !(self.clip_gamma > 0.0) {
            return Err(IndRnnError::InvalidParam(format!(
                "clip gamma must be > 0, got {}",
                self.clip_gamma
            )));
        }
        if self.neighborhood_k % 2 == 0 || self.neighborhood_k == 0 {
            return Err(IndRnnError::InvalidParam(format!(
                "neighborhood size must be odd and >= 1, got {}",
                self.neighborhood_k
            )));
        }
        Ok(())
    }
}

/// Per-pixel nodule probabilities, row-major in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    width: usize,
    height: usize,
    probs: Vec<f64>,
}

impl ProbMap {
    pub fn new(width: usize, height: usize, probs: Vec<f64>) -> Result<Self, IndRnnError> {
        if probs.len() != width * height {
            return Err(IndRnnError::DimensionMismatch(format!(
                "probability count {} does not match {width}x{height}",
                probs.len()
            )));
        }
        if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(IndRnnError::InvalidParam(format!(
                "probability {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            probs,
        })
    }

    /// Reinterpret grayscale intensities as probabilities (used when reading
    /// a probability map back from its quantized image form).
    pub fn from_gray(image: &GrayImage) -> Self {
        Self {
            width: image.width(),
            height: image.height(),
            probs: image.pixels().to_vec(),
        }
    }

    /// Render as a grayscale image for quantized storage.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::new(self.width, self.height, self.probs.clone())
            .expect("probabilities are valid intensities")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.probs[y * self.width + x]
    }
}

/// Turn an image into one sequence per row. The step-`t` input is the
/// flattened `k x k` replicate-padded neighborhood of pixel `(t, row)`
/// (row-major), so the input dimension is `k * k`.
pub fn encode_rows(image: &GrayImage, neighborhood_k: usize) -> Result<Vec<Vec<Vec<f64>>>, IndRnnError> {
    if neighborhood_k % 2 == 0 || neighborhood_k == 0 {
        return Err(IndRnnError::InvalidParam(format!(
            "neighborhood size must be odd and >= 1, got {neighborhood_k}"
        )));
    }
    let r = (neighborhood_k / 2) as isize;
    let mut rows = Vec::with_capacity(image.height());
    for y in 0..image.height() as isize {
        let mut seq = Vec::with_capacity(image.width());
        for x in 0..image.width() as isize {
            let mut feat = Vec::with_capacity(neighborhood_k * neighborhood_k);
            for dy in -r..=r {
                for dx in -r..=r {
                    feat.push(image.get_clamped(x + dx, y + dy));
                }
            }
            seq.push(feat);
        }
        rows.push(seq);
    }
    Ok(rows)
}

/// Run one layer over a sequence. `h0` defaults to zero.
///
/// Per-step accumulation order is fixed — bias, then the input dot product
/// in ascending index order, then the recurrent product — so repeated runs
/// are bit-identical and the per-neuron recurrence
/// `h_{n,t} = relu(w_n . x_t + u_n h_{n,t-1} + b_n)` holds exactly.
pub fn layer_forward(
    layer: &IndRnnLayer,
    inputs: &[Vec<f64>],
    h0: Option<&[f64]>,
) -> Result<Vec<Vec<f64>>, IndRnnError> {
    let units = layer.units();
    let dim = layer.input_dim();
    if let Some(h0) = h0 {
        if h0.len() != units {
            return Err(IndRnnError::DimensionMismatch(format!(
                "initial state has {} entries for {units} units",
                h0.len()
            )));
        }
    }
    let mut hidden = Vec::with_capacity(inputs.len());
    let mut prev = h0.map_or_else(|| vec![0.0; units], <[f64]>::to_vec);
    for x in inputs {
        if x.len() != dim {
            return Err(IndRnnError::DimensionMismatch(format!(
                "input vector has {} entries for input dim {dim}",
                x.len()
            )));
        }
        let mut h = Vec::with_capacity(units);
        for n in 0..units {
            let mut acc = layer.b[n];
            let row = &layer.w[n * dim..(n + 1) * dim];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            acc += layer.u[n] * prev[n];
            h.push(acc.max(0.0));
        }
        hidden.push(h);
        prev = hidden.last().unwrap().clone();
    }
    Ok(hidden)
}

/// Run the whole stack over a sequence and return per-step probabilities.
pub fn network_forward(net: &IndRnnNetwork, inputs: &[Vec<f64>]) -> Result<Vec<f64>, IndRnnError> {
    let (hidden, probs) = forward_states(net, inputs)?;
    drop(hidden);
    Ok(probs)
}

/// Forward pass keeping every layer's hidden sequence; shared by prediction
/// and backpropagation.
pub(crate) fn forward_states(
    net: &IndRnnNetwork,
    inputs: &[Vec<f64>],
) -> Result<(Vec<Vec<Vec<f64>>>, Vec<f64>), IndRnnError> {
    let mut hidden: Vec<Vec<Vec<f64>>> = Vec::with_capacity(net.layers.len());
    for (i, layer) in net.layers.iter().enumerate() {
        let seq = if i == 0 {
            layer_forward(layer, inputs, None)?
        } else {
            layer_forward(layer, &hidden[i - 1], None)?
        };
        hidden.push(seq);
    }
    let probs = hidden
        .last()
        .expect("network has at least one layer")
        .iter()
        .map(|h| net.head.prob(h))
        .collect();
    Ok((hidden, probs))
}

/// Clamp every recurrent weight into `[-gamma^(1/T), gamma^(1/T)]` so the
/// `T`-step amplification stays bounded by `gamma`.
pub fn clip_recurrent(layer: &mut IndRnnLayer, gamma: f64, max_seq_len: usize) {
    debug_assert!(gamma > 0.0 && max_seq_len >= 1);
    let bound = gamma.powf(1.0 / max_seq_len as f64);
    for u in &mut layer.u {
        *u = u.clamp(-bound, bound);
    }
}

/// Per-pixel probabilities for a whole image: encode rows, run the network
/// on each, and place outputs at their pixel coordinates.
pub fn predict_prob_map(
    net: &IndRnnNetwork,
    image: &GrayImage,
    neighborhood_k: usize,
) -> Result<ProbMap, IndRnnError> {
    if net.input_dim() != neighborhood_k * neighborhood_k {
        return Err(IndRnnError::DimensionMismatch(format!(
            "network input dim {} does not match neighborhood {neighborhood_k}x{neighborhood_k}",
            net.input_dim()
        )));
    }
    let mut probs = Vec::with_capacity(image.width() * image.height());
    for seq in encode_rows(image, neighborhood_k)? {
        probs.extend(network_forward(net, &seq)?);
    }
    ProbMap::new(image.width(), image.height(), probs)
}

/// Threshold probabilities into a mask; ties (`p == threshold`) go to 1.
pub fn binarize(map: &ProbMap, threshold: f64) -> LabelMask {
    let labels = map.probs.iter().map(|&p| u8::from(p >= threshold)).collect();
    LabelMask::new(map.width, map.height, labels).expect("thresholding yields binary labels")
}
