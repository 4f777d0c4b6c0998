use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{accumulate_gradient, forward, logit, ModelSpec};
use super::tape::{bce_with_logits, Tensor};
use super::NnError;
use crate::util::{derive_seed, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 10,
        }
    }
}

/// Model inputs with binary labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Result of [`train`]: best-validation weights and the per-epoch history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub weights: Vec<f64>,
    pub history: Vec<EpochRecord>,
    /// Epoch whose weights were kept (0 = initialization).
    pub best_epoch: usize,
}

/// Adam state over a flat parameter vector.
pub struct Adam {
    cfg: TrainConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, n: usize) -> Self {
        Self {
            cfg: cfg.clone(),
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One update; weights are kept at single precision.
    pub fn step(&mut self, weights: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for i in 0..weights.len() {
            let g = grad[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            let w = weights[i] - c.lr * mhat / (vhat.sqrt() + c.eps);
            weights[i] = w as f32 as f64;
        }
    }
}

pub fn mean_loss(spec: &ModelSpec, weights: &[f64], data: &Dataset) -> Result<f64, NnError> {
    let mut total = 0.0;
    for (x, &y) in data.inputs.iter().zip(&data.labels) {
        total += bce_with_logits(logit(spec, weights, x)?, y as f64);
    }
    Ok(total / data.len() as f64)
}

/// Mini-batch Adam on binary cross-entropy with per-epoch seeded shuffling and
/// early stopping on validation loss. Weights from the best validation epoch
/// are returned.
pub fn train(
    spec: &ModelSpec,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, NnError> {
    spec.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(NnError::EmptyData);
    }
    for x in train.inputs.iter().chain(&val.inputs) {
        spec.check_input(x)?;
    }
    let n = spec.param_count();
    let mut weights = spec.init_weights();
    let mut adam = Adam::new(cfg, n);
    let mut shuffle_rng = rng(derive_seed(spec.seed, "shuffle"));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, weights.clone());
    let mut since_best = 0;
    let mut grad = vec![0.0; n];

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let loss = accumulate_gradient(spec, &weights, &train.inputs[i], train.labels[i], scale, &mut grad)
                    .map_err(|e| match e {
                        NnError::NonFiniteLoss => NnError::Diverged { epoch },
                        other => other,
                    })?;
                epoch_loss += loss;
            }
            adam.step(&mut weights, &grad);
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_loss = mean_loss(spec, &weights, val)?;
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(NnError::Diverged { epoch });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        log::debug!("{} epoch {epoch}: train {train_loss:.5} val {val_loss:.5}", spec.arch);
        if val_loss < best.0 {
            best = (val_loss, epoch, weights.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        weights: best.2,
        history,
        best_epoch: best.1,
    })
}

pub fn accuracy(spec: &ModelSpec, weights: &[f64], data: &Dataset) -> Result<f64, NnError> {
    let mut correct = 0;
    for (x, &y) in data.inputs.iter().zip(&data.labels) {
        let pred = (forward(spec, weights, x)? >= 0.5) as u8;
        correct += (pred == y) as usize;
    }
    Ok(correct as f64 / data.len() as f64)
}
