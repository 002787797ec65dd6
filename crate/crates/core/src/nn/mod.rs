//! Classifier on time-frequency images: a frozen convolutional stem feeding a
//! trainable 512-unit head with log-softmax output, trained by Adam with
//! validation-based early stopping.
//!
//! Because the stem never changes, training works on cached stem features.

pub mod stem;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use stem::{Stem, FEATURE_DIM};

use crate::binio::{read_f64_le, read_json, write_f64_le, write_json};
use crate::{Error, PerformanceLevel, Result};

pub const N_CLASSES: usize = 3;
pub const HIDDEN: usize = 512;

/// A differentiable classifier over fixed-length inputs.
pub trait Classifier: Sync {
    fn n_params(&self) -> usize;

    fn log_probs(&self, params: &[f64], x: &[f64]) -> Vec<f64>;

    /// Adds `scale * d log p(label | x) / d params` into `grad` and returns
    /// `log p(label | x)`.
    fn accumulate_log_prob_grad(&self, params: &[f64], x: &[f64], label: usize, scale: f64, grad: &mut [f64]) -> f64;
}

/// Named contiguous range of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlice {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// `dense(in -> 512) -> ReLU -> dense(512 -> 3) -> log-softmax`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Head {
    pub in_dim: usize,
    pub hidden: usize,
    pub n_classes: usize,
}

impl Head {
    pub fn new(in_dim: usize) -> Self {
        Self {
            in_dim,
            hidden: HIDDEN,
            n_classes: N_CLASSES,
        }
    }

    /// Layout `[w1 (hidden x in), b1, w2 (classes x hidden), b2]`.
    pub fn slices(&self) -> Vec<ParamSlice> {
        let shapes = [
            ("dense1.weight", vec![self.hidden, self.in_dim]),
            ("dense1.bias", vec![self.hidden]),
            ("out.weight", vec![self.n_classes, self.hidden]),
            ("out.bias", vec![self.n_classes]),
        ];
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(name, shape)| {
                let len = shape.iter().product();
                let s = ParamSlice {
                    name: name.into(),
                    shape,
                    offset,
                    len,
                };
                offset += len;
                s
            })
            .collect()
    }

    /// He-normal hidden weights, Glorot-scaled output weights, zero biases.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.n_params()];
        let s = self.slices();
        let he = Normal::new(0.0, (2.0 / self.in_dim as f64).sqrt()).expect("positive sd");
        for v in &mut p[s[0].offset..s[0].offset + s[0].len] {
            *v = he.sample(&mut rng);
        }
        let glorot = Normal::new(0.0, (2.0 / (self.hidden + self.n_classes) as f64).sqrt()).expect("positive sd");
        for v in &mut p[s[2].offset..s[2].offset + s[2].len] {
            *v = glorot.sample(&mut rng);
        }
        p
    }

    fn split<'a>(&self, p: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], &'a [f64]) {
        let (w1, rest) = p.split_at(self.hidden * self.in_dim);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.n_classes * self.hidden);
        (w1, b1, w2, b2)
    }

    fn hidden_activations(&self, w1: &[f64], b1: &[f64], x: &[f64]) -> Vec<f64> {
        w1.chunks_exact(self.in_dim)
            .zip(b1)
            .map(|(row, b)| (dot(row, x) + b).max(0.0))
            .collect()
    }

    fn logits(&self, w2: &[f64], b2: &[f64], h: &[f64]) -> Vec<f64> {
        w2.chunks_exact(self.hidden).zip(b2).map(|(row, b)| dot(row, h) + b).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `z - logsumexp(z)`.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

impl Classifier for Head {
    fn n_params(&self) -> usize {
        self.hidden * self.in_dim + self.hidden + self.n_classes * self.hidden + self.n_classes
    }

    fn log_probs(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let (w1, b1, w2, b2) = self.split(params);
        let h = self.hidden_activations(w1, b1, x);
        log_softmax(&self.logits(w2, b2, &h))
    }

    fn accumulate_log_prob_grad(&self, params: &[f64], x: &[f64], label: usize, scale: f64, grad: &mut [f64]) -> f64 {
        let (w1, b1, w2, b2) = self.split(params);
        let h = self.hidden_activations(w1, b1, x);
        let lp = log_softmax(&self.logits(w2, b2, &h));
        // d log p_y / d z = onehot(y) - softmax(z).
        let delta: Vec<f64> = lp
            .iter()
            .enumerate()
            .map(|(k, l)| scale * (f64::from(u8::from(k == label)) - l.exp()))
            .collect();
        let (g_w1, rest) = grad.split_at_mut(self.hidden * self.in_dim);
        let (g_b1, rest) = rest.split_at_mut(self.hidden);
        let (g_w2, g_b2) = rest.split_at_mut(self.n_classes * self.hidden);
        let mut dh = vec![0.0; self.hidden];
        for k in 0..self.n_classes {
            let dk = delta[k];
            g_b2[k] += dk;
            let row_w = &w2[k * self.hidden..(k + 1) * self.hidden];
            let row_g = &mut g_w2[k * self.hidden..(k + 1) * self.hidden];
            for j in 0..self.hidden {
                row_g[j] += dk * h[j];
                dh[j] += dk * row_w[j];
            }
        }
        for j in 0..self.hidden {
            if h[j] <= 0.0 {
                continue;
            }
            g_b1[j] += dh[j];
            let row_g = &mut g_w1[j * self.in_dim..(j + 1) * self.in_dim];
            for (g, xi) in row_g.iter_mut().zip(x) {
                *g += dh[j] * xi;
            }
        }
        lp[label]
    }
}

/// Inputs with class labels. Carries no task identity, so nothing downstream
/// can branch on it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Examples {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Examples {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Shape {
                expected: format!("{} labels", inputs.len()),
                got: labels.len().to_string(),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= N_CLASSES) {
            return Err(Error::Domain(format!("label {l} outside {N_CLASSES} classes")));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn concat(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.inputs.extend(other.inputs.iter().cloned());
        out.labels.extend(&other.labels);
        out
    }
}

/// Stem features for every image, in input order.
pub fn stem_features(stem: &Stem, images: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    images.par_iter().map(|im| stem.forward(im)).collect()
}

pub fn class_index(level: PerformanceLevel) -> usize {
    level.index()
}

/// Mean negative log-likelihood over `batch` and its gradient.
///
/// Examples are accumulated in order, so the result is deterministic.
pub fn nll_loss_and_grad<C: Classifier + ?Sized>(model: &C, params: &[f64], batch: &Examples) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; model.n_params()];
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for (x, &y) in batch.inputs.iter().zip(&batch.labels) {
        loss -= model.accumulate_log_prob_grad(params, x, y, -1.0 / n, &mut grad);
    }
    (loss / n, grad)
}

pub fn nll_loss<C: Classifier + ?Sized>(model: &C, params: &[f64], data: &Examples) -> f64 {
    let total: f64 = data
        .inputs
        .par_iter()
        .zip(&data.labels)
        .map(|(x, &y)| -model.log_probs(params, x)[y])
        .collect::<Vec<_>>()
        .iter()
        .sum();
    total / data.len() as f64
}

/// Predicted class per input; ties go to the lower class index.
pub fn predict<C: Classifier + ?Sized>(model: &C, params: &[f64], inputs: &[Vec<f64>]) -> Vec<usize> {
    inputs
        .par_iter()
        .map(|x| {
            let lp = model.log_probs(params, x);
            let mut best = 0;
            for k in 1..lp.len() {
                if lp[k] > lp[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Fraction of argmax-correct predictions.
pub fn evaluate<C: Classifier + ?Sized>(model: &C, params: &[f64], data: &Examples) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let pred = predict(model, params, &data.inputs);
    pred.iter().zip(&data.labels).filter(|(p, y)| p == y).count() as f64 / data.len() as f64
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.003,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 32,
            max_epochs: 50,
            patience: 3,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size, max_epochs and patience must be positive".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction)));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Tracks the best validation loss; signals a stop after `patience`
/// consecutive epochs without a strict improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
            epoch: 0,
        }
    }

    /// Records one epoch's validation loss. Returns `(improved, stop)`.
    pub fn observe(&mut self, loss: f64) -> (bool, bool) {
        self.epoch += 1;
        if loss < self.best {
            self.best = loss;
            self.best_epoch = self.epoch;
            self.stale = 0;
            (true, false)
        } else {
            self.stale += 1;
            (false, self.stale >= self.patience)
        }
    }

    /// 1-based epoch of the best loss so far.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// Seeded stratified split: about `val_fraction` of each class (at least one
/// example) goes to validation.
pub fn stratified_split(data: &Examples, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in 0..N_CLASSES {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_val = if idx.is_empty() {
            0
        } else {
            ((idx.len() as f64 * val_fraction).round() as usize).clamp(1, idx.len())
        };
        if idx.len() - n_val == 0 {
            return Err(Error::Domain(format!("class {class} has no training examples after the split")));
        }
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Optional additions to the plain training loop.
pub trait TrainingHooks {
    /// Called with each mini-batch before the gradient step.
    fn extend_batch(&mut self, _batch: &mut Examples) {}

    /// Adds a penalty gradient into `grad` and returns the penalty value.
    fn penalty(&self, _params: &[f64], _grad: &mut [f64]) -> f64 {
        0.0
    }
}

pub struct NoHooks;

impl TrainingHooks for NoHooks {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub n_train: usize,
    pub n_val: usize,
}

/// Adam over shuffled mini-batches of the training part of a stratified
/// split, keeping the parameters of the epoch with the lowest validation NLL.
pub fn train_with_early_stopping<C: Classifier + ?Sized>(
    model: &C,
    data: &Examples,
    params: Vec<f64>,
    config: &TrainConfig,
) -> Result<(Vec<f64>, TrainHistory)> {
    train_with_hooks(model, data, params, config, &mut NoHooks)
}

pub fn train_with_hooks<C: Classifier + ?Sized, H: TrainingHooks + ?Sized>(
    model: &C,
    data: &Examples,
    mut params: Vec<f64>,
    config: &TrainConfig,
    hooks: &mut H,
) -> Result<(Vec<f64>, TrainHistory)> {
    config.validate()?;
    if data.len() < 10 {
        return Err(Error::Domain(format!("need at least 10 examples, got {}", data.len())));
    }
    if params.len() != model.n_params() {
        return Err(Error::Shape {
            expected: format!("{} parameters", model.n_params()),
            got: params.len().to_string(),
        });
    }
    let (train_idx, val_idx) = stratified_split(data, config.val_fraction, config.seed)?;
    let train = data.subset(&train_idx);
    let val = data.subset(&val_idx);

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut adam = AdamState::new(params.len());
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = params.clone();
    let mut records = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut train_loss = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let mut batch = train.subset(chunk);
            hooks.extend_batch(&mut batch);
            let (loss, mut grad) = nll_loss_and_grad(model, &params, &batch);
            let pen = hooks.penalty(&params, &mut grad);
            adam_step(&mut params, &grad, &mut adam, &config.adam);
            train_loss += loss + pen;
            n_batches += 1;
        }
        let val_loss = nll_loss(model, &params, &val);
        let val_accuracy = evaluate(model, &params, &val);
        records.push(EpochRecord {
            epoch,
            train_loss: train_loss / n_batches as f64,
            val_loss,
            val_accuracy,
        });
        let (improved, stop) = stopper.observe(val_loss);
        if improved {
            best.copy_from_slice(&params);
        }
        if stop {
            break;
        }
    }
    Ok((
        best,
        TrainHistory {
            epochs: records,
            best_epoch: stopper.best_epoch(),
            n_train: train.len(),
            n_val: val.len(),
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub slices: Vec<ParamSlice>,
    pub stem_seed: u64,
    pub stem_fingerprint: u64,
    pub class_names: Vec<String>,
    pub training: TrainConfig,
}

fn checkpoint_paths(stem_path: &Path) -> (PathBuf, PathBuf) {
    (stem_path.with_extension("f64"), stem_path.with_extension("json"))
}

pub fn write_checkpoint(path: &Path, head: &Head, params: &[f64], stem: &Stem, training: &TrainConfig) -> Result<()> {
    let (bin, json) = checkpoint_paths(path);
    write_f64_le(&bin, params)?;
    write_json(
        &json,
        &CheckpointManifest {
            slices: head.slices(),
            stem_seed: stem.seed,
            stem_fingerprint: stem.fingerprint(),
            class_names: PerformanceLevel::ALL.iter().map(|l| l.to_string()).collect(),
            training: training.clone(),
        },
    )
}

pub fn read_checkpoint(path: &Path) -> Result<(Vec<f64>, CheckpointManifest)> {
    let (bin, json) = checkpoint_paths(path);
    let m: CheckpointManifest = read_json(&json)?;
    let params = read_f64_le(&bin)?;
    let expected: usize = m.slices.iter().map(|s| s.len).sum();
    if params.len() != expected {
        return Err(Error::Shape {
            expected: format!("{expected} parameters"),
            got: params.len().to_string(),
        });
    }
    Ok((params, m))
}
