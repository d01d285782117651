//! Teacher-forced training with Adam.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use endorse_core::rng::{stream, Stream};

use crate::config::TrainConfig;
use crate::error::ModelError;
use crate::model::{self, Example};
use crate::params::Parameters;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean example loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean batch loss of each optimizer step.
    pub step_losses: Vec<f64>,
    pub steps: usize,
}

pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, values: &mut [f64], grads: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..values.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            values[i] -= lr * mhat / (vhat.sqrt() + cfg.epsilon);
        }
    }
}

/// Learning rate at `step` (0-based): linear warm-up, then constant.
pub fn learning_rate(cfg: &TrainConfig, step: usize, total_steps: usize) -> f64 {
    let warmup = (cfg.warmup_fraction * total_steps as f64).ceil() as usize;
    if warmup == 0 || step >= warmup {
        cfg.learning_rate
    } else {
        cfg.learning_rate * (step + 1) as f64 / warmup as f64
    }
}

/// Summed loss and gradient over a batch, reduced in example order.
pub fn batch_loss_and_grad(params: &Parameters, batch: &[Example], seeds: &[u64]) -> Result<(f64, Vec<f64>), ModelError> {
    let dropout = params.config.dropout > 0.0;
    let results: Vec<Result<(f64, Vec<f64>), ModelError>> = batch
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(ex, &seed)| {
            if dropout {
                let mut rng = stream(seed, Stream::Dropout);
                model::loss_and_grad(params, ex, Some(&mut rng))
            } else {
                model::loss_and_grad(params, ex, None)
            }
        })
        .collect();
    let mut total = 0.0;
    let mut grads = vec![0.0; params.values.len()];
    for r in results {
        let (l, g) = r?;
        total += l;
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((total, grads))
}

fn clip(grads: &mut [f64], max_norm: f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
}

/// Train in place. Each epoch visits the examples in a fresh order drawn
/// from the seed's shuffle stream. Gradients of pruned companion levels are
/// held at zero.
pub fn train(params: &mut Parameters, data: &[Example], cfg: &TrainConfig) -> Result<TrainReport, ModelError> {
    if data.is_empty() {
        return Err(ModelError::Empty("training set"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(ModelError::Config("batch_size and epochs must be positive".into()));
    }
    let frozen: Vec<std::ops::Range<usize>> = params
        .config
        .pruned_levels()
        .into_iter()
        .flat_map(|t| params.layout.level_slots(t))
        .map(|s| params.layout.slots[s].range())
        .collect();
    let batches_per_epoch = data.len().div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.epochs;
    let mut shuffle = stream(cfg.seed, Stream::DataShuffle);
    let mut adam = Adam::new(params.values.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport {
        epoch_losses: Vec::with_capacity(cfg.epochs),
        step_losses: Vec::with_capacity(total_steps),
        steps: 0,
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut epoch_total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let step = report.steps;
            let batch: Vec<Example> = chunk.iter().map(|&i| data[i].clone()).collect();
            let seeds: Vec<u64> = chunk
                .iter()
                .map(|&i| cfg.seed ^ ((step as u64) << 32) ^ i as u64)
                .collect();
            let (loss, mut grads) = batch_loss_and_grad(params, &batch, &seeds)?;
            if !loss.is_finite() {
                return Err(ModelError::Diverged { step, loss });
            }
            let n = batch.len() as f64;
            grads.iter_mut().for_each(|g| *g /= n);
            for r in &frozen {
                grads[r.clone()].fill(0.0);
            }
            if let Some(max) = cfg.max_grad_norm {
                clip(&mut grads, max);
            }
            let lr = learning_rate(cfg, step, total_steps);
            adam.step(&mut params.values, &grads, lr, cfg);
            epoch_total += loss;
            report.step_losses.push(loss / n);
            report.steps += 1;
        }
        let mean = epoch_total / data.len() as f64;
        log::info!("epoch {} loss {:.4}", epoch + 1, mean);
        report.epoch_losses.push(mean);
    }
    Ok(report)
}

/// Fraction of target positions whose teacher-forced argmax is correct.
pub fn next_token_accuracy(params: &Parameters, data: &[Example]) -> Result<f64, ModelError> {
    let per: Vec<Result<(usize, usize), ModelError>> = data
        .par_iter()
        .map(|ex| {
            let pred = model::predict_teacher_forced(params, ex)?;
            let hits = pred.iter().zip(&ex.target).filter(|(p, t)| p == t).count();
            Ok((hits, ex.target.len()))
        })
        .collect();
    let (mut hits, mut total) = (0, 0);
    for r in per {
        let (h, t) = r?;
        hits += h;
        total += t;
    }
    if total == 0 {
        return Err(ModelError::Empty("evaluation set"));
    }
    Ok(hits as f64 / total as f64)
}

/// Mean example loss without updates.
pub fn mean_loss(params: &Parameters, data: &[Example]) -> Result<f64, ModelError> {
    let losses: Vec<Result<f64, ModelError>> = data.par_iter().map(|ex| model::loss(params, ex)).collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / data.len().max(1) as f64)
}
