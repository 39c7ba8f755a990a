//! Minibatch Adam training shared by initial training and the offline
//! maintenance policies.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParamModel, Sample};
use crate::nn::{AdamState, PlateauScheduler};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mae,
    Mse,
}

impl Loss {
    pub fn value(self, pred: &[f64], target: &[f64]) -> f64 {
        let n = pred.len().max(1) as f64;
        let s: f64 = match self {
            Loss::Mae => pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum(),
            Loss::Mse => pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum(),
        };
        s / n
    }

    /// `scale * dL/dpred` written into `out`.
    pub fn cotangent(self, pred: &[f64], target: &[f64], scale: f64, out: &mut [f64]) {
        let c = scale / pred.len().max(1) as f64;
        for ((o, p), t) in out.iter_mut().zip(pred).zip(target) {
            let e = p - t;
            *o = match self {
                Loss::Mae => {
                    c * if e > 0.0 {
                        1.0
                    } else if e < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
                Loss::Mse => 2.0 * c * e,
            };
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub loss: Loss,
    #[serde(default)]
    pub plateau: Option<PlateauConfig>,
    /// Stop as soon as the training loss is below this value.
    #[serde(default)]
    pub early_stop: Option<f64>,
    /// Draw this many samples (without replacement) per epoch instead of the full set.
    #[serde(default)]
    pub samples_per_epoch: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Mean training loss of each epoch (measured during the epoch).
    pub epoch_losses: Vec<f64>,
    pub final_lr: f64,
    pub stopped_early: bool,
}

/// Mean loss over `samples`.
pub fn mean_loss<M: ParamModel + ?Sized>(model: &M, samples: &[Sample], loss: Loss) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::NoData("loss over an empty sample set".into()));
    }
    let mut total = 0.0;
    for s in samples {
        total += loss.value(&model.predict(&s.input)?, &s.target);
    }
    Ok(total / samples.len() as f64)
}

/// Mean loss and its gradient over `batch`; the gradient overwrites `grad`.
pub fn batch_gradient<M: ParamModel + ?Sized>(
    model: &M,
    batch: &[&Sample],
    loss: Loss,
    grad: &mut [f64],
) -> Result<f64> {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut total = 0.0;
    for s in batch {
        let pred = model.backprop(&s.input, &mut |p, c| loss.cotangent(p, &s.target, scale, c), grad)?;
        total += loss.value(&pred, &s.target);
    }
    Ok(total * scale)
}

/// Trains `model` in place. With `mask`, only those parameter indices move.
pub fn train<M: ParamModel + ?Sized>(
    model: &mut M,
    samples: &[Sample],
    cfg: &TrainConfig,
    mask: Option<&[usize]>,
    rng: &mut Rng,
) -> Result<TrainReport> {
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("batch size and learning rate must be positive".into()));
    }
    let mut report = TrainReport {
        final_lr: cfg.lr,
        ..Default::default()
    };
    if cfg.epochs == 0 || samples.is_empty() || mask.is_some_and(|m| m.is_empty()) {
        return Ok(report);
    }
    if let Some(threshold) = cfg.early_stop {
        if mean_loss(model, samples, cfg.loss)? < threshold {
            report.stopped_early = true;
            return Ok(report);
        }
    }
    let l = model.n_params();
    let mut adam = AdamState::new(l, cfg.lr);
    let mut scheduler = cfg.plateau.map(|p| PlateauScheduler::new(p.factor, p.patience));
    let mut grad = vec![0.0; l];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let per_epoch = cfg.samples_per_epoch.unwrap_or(samples.len()).clamp(1, samples.len());
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in order[..per_epoch].chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let loss = batch_gradient(model, &batch, cfg.loss, &mut grad)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("training loss diverged in epoch {}", epoch + 1)));
            }
            match mask {
                Some(idx) => adam.step_subset(model.params_mut(), &grad, idx)?,
                None => adam.step(model.params_mut(), &grad)?,
            }
            total += loss * batch.len() as f64;
            count += batch.len();
        }
        let epoch_loss = total / count as f64;
        report.epoch_losses.push(epoch_loss);
        report.epochs_run = epoch + 1;
        if let Some(s) = scheduler.as_mut() {
            adam.lr = s.update(epoch_loss, adam.lr);
        }
        if cfg.early_stop.is_some_and(|t| epoch_loss < t) {
            report.stopped_early = true;
            break;
        }
    }
    report.final_lr = adam.lr;
    Ok(report)
}
