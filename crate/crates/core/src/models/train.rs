//! Mini-batch Adam training with validation-based model selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::nn::Params;
use crate::error::{Error, Result};

/// A model trainable on samples of type `Sample`.
pub trait Trainable: Params + Clone {
    type Sample;

    /// Fields covered by one sample; batches hold `batch_fields` fields.
    fn fields_per_sample(&self) -> usize;

    /// Accumulates gradients of the batch's mean per-bit loss; returns it.
    fn accumulate(&mut self, batch: &[&Self::Sample]) -> f64;

    /// Summed clamped BCE (nats) and number of bits over `samples`.
    fn validation(&self, samples: &[Self::Sample]) -> (f64, usize);
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub batch_fields: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            patience: 5,
            batch_fields: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches (nats per bit).
    pub train_loss: f64,
    /// Clamped validation BCE (nats per bit).
    pub val_bce: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    /// Validation BCE of the kept parameters after rounding to `f32`.
    pub best_val_bce: f64,
}

pub struct Adam {
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Adam {
            lr: cfg.learning_rate,
            b1: cfg.beta1,
            b2: cfg.beta2,
            eps: cfg.epsilon,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step<M: Params>(&mut self, model: &mut M) {
        self.t += 1;
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        let mut i = 0;
        let (m, v) = (&mut self.m, &mut self.v);
        let (lr, b1, b2, eps) = (self.lr, self.b1, self.b2, self.eps);
        model.visit_mut("", &mut |_, t| {
            if m.len() <= i {
                m.push(vec![0.0; t.len()]);
                v.push(vec![0.0; t.len()]);
            }
            let (mi, vi) = (&mut m[i], &mut v[i]);
            for j in 0..t.len() {
                let g = t.grad[j];
                mi[j] = b1 * mi[j] + (1.0 - b1) * g;
                vi[j] = b2 * vi[j] + (1.0 - b2) * g * g;
                t.data[j] -= lr * (mi[j] / c1) / ((vi[j] / c2).sqrt() + eps);
            }
            i += 1;
        });
    }
}

/// Trains `model` and returns the parameters with the lowest validation
/// BCE, rounded to `f32`. With an empty validation set the training loss
/// drives selection.
pub fn train<M: Trainable>(
    mut model: M,
    train_set: &[M::Sample],
    val_set: &[M::Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(M, TrainReport)> {
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    let batch = (cfg.batch_fields / model.fields_per_sample().max(1)).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut adam = Adam::new(cfg);
    let mut best: Option<(f64, usize, M)> = None;
    let mut epochs = Vec::new();
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (bi, chunk) in order.chunks(batch).enumerate() {
            let refs: Vec<&M::Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            model.zero_grad();
            let loss = model.accumulate(&refs);
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "loss became {loss} in epoch {epoch}, batch {bi}"
                )));
            }
            let mut finite = true;
            model.visit("", &mut |_, t| finite &= t.grad.iter().all(|g| g.is_finite()));
            if !finite {
                return Err(Error::Divergence(format!(
                    "non-finite gradient in epoch {epoch}, batch {bi}"
                )));
            }
            adam.step(&mut model);
            loss_sum += loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let val_bce = if val_set.is_empty() {
            train_loss
        } else {
            let (sum, bits) = model.validation(val_set);
            sum / bits.max(1) as f64
        };
        if !val_bce.is_finite() {
            return Err(Error::Divergence(format!("validation loss became {val_bce} in epoch {epoch}")));
        }
        let stats = EpochStats {
            epoch,
            train_loss,
            val_bce,
        };
        on_epoch(&stats);
        epochs.push(stats);
        if best.as_ref().is_none_or(|b| val_bce < b.0) {
            best = Some((val_bce, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    let (_, best_epoch, mut kept) = best.expect("at least one epoch ran");
    kept.round_to_f32();
    let best_val_bce = if val_set.is_empty() {
        epochs[best_epoch - 1].val_bce
    } else {
        let (sum, bits) = kept.validation(val_set);
        sum / bits.max(1) as f64
    };
    Ok((
        kept,
        TrainReport {
            epochs,
            best_epoch,
            best_val_bce,
        },
    ))
}
