//! Event-triggered offline maintenance on a rolling horizon, and the
//! per-sample online gradient baseline.

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParamModel, Sample};
use crate::nn::AdamState;
use crate::rng::Rng;
use crate::selection::SelectionPolicy;
use crate::training::{batch_gradient, train, Loss, TrainConfig, TrainReport};

/// FIFO window of the most recent samples.
#[derive(Clone, Debug, PartialEq)]
pub struct RollingBuffer {
    capacity: usize,
    items: VecDeque<Sample>,
}

impl RollingBuffer {
    pub fn new(capacity: usize) -> Self {
        RollingBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, sample: Sample) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(sample);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample> {
        self.items.iter()
    }

    pub fn to_vec(&self) -> Vec<Sample> {
        self.items.iter().cloned().collect()
    }
}

/// True iff `recent_loss` is strictly above `threshold`.
pub fn maintenance_trigger(recent_loss: f64, threshold: f64) -> bool {
    recent_loss > threshold
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OfflineMode {
    Retrain,
    Finetune,
}

/// Statistic compared against the trigger threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TriggerStatistic {
    /// Loss of the most recent sample.
    Latest,
    /// Mean loss of the last `window` samples.
    RollingMean { window: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflinePolicyConfig {
    pub mode: OfflineMode,
    pub threshold: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub selection: SelectionPolicy,
    pub buffer_capacity: usize,
    pub loss: Loss,
    #[serde(default = "latest")]
    pub trigger: TriggerStatistic,
    /// Training-loss level that ends an event early; defaults to `threshold`.
    #[serde(default)]
    pub early_stop: Option<f64>,
}

fn latest() -> TriggerStatistic {
    TriggerStatistic::Latest
}

impl OfflinePolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || !(self.threshold > 0.0) || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config(
                "offline policy needs epochs >= 1, threshold > 0, batch size >= 1 and lr > 0".into(),
            ));
        }
        if self.selection.needs_fit() {
            return Err(Error::Config("Mag selection must be fitted before maintenance".into()));
        }
        Ok(())
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            loss: self.loss,
            plateau: None,
            early_stop: Some(self.early_stop.unwrap_or(self.threshold)),
            samples_per_epoch: None,
        }
    }
}

/// What one offline maintenance event did.
#[derive(Clone, Debug, PartialEq)]
pub struct EventOutcome {
    /// Parameters allowed to move (`None` means all).
    pub selected: Option<Vec<usize>>,
    pub report: TrainReport,
    pub wall_time: f64,
}

fn select_for_buffer<M: ParamModel + ?Sized>(
    model: &M,
    samples: &[Sample],
    cfg: &OfflinePolicyConfig,
) -> Result<Option<Vec<usize>>> {
    if cfg.selection == SelectionPolicy::All {
        return Ok(None);
    }
    let mut grad = vec![0.0; model.n_params()];
    let refs: Vec<&Sample> = samples.iter().collect();
    batch_gradient(model, &refs, cfg.loss, &mut grad)?;
    let abs: Vec<f64> = grad.into_iter().map(f64::abs).collect();
    Ok(Some(cfg.selection.select(&abs)?))
}

/// Warm-started Adam training on the buffer, restricted to the parameters
/// selected from the buffer-mean loss gradient. An empty buffer is a no-op.
pub fn finetune<M: ParamModel + ?Sized>(
    model: &mut M,
    buffer: &RollingBuffer,
    cfg: &OfflinePolicyConfig,
    rng: &mut Rng,
) -> Result<EventOutcome> {
    let start = Instant::now();
    cfg.validate()?;
    if buffer.is_empty() {
        return Ok(EventOutcome {
            selected: Some(Vec::new()),
            report: TrainReport::default(),
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    let samples = buffer.to_vec();
    let selected = select_for_buffer(model, &samples, cfg)?;
    let report = train(model, &samples, &cfg.train_config(), selected.as_deref(), rng)?;
    Ok(EventOutcome {
        selected,
        report,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Xavier re-initialization followed by [`finetune`].
pub fn retrain<M: ParamModel + ?Sized>(
    model: &mut M,
    buffer: &RollingBuffer,
    cfg: &OfflinePolicyConfig,
    rng: &mut Rng,
) -> Result<EventOutcome> {
    let start = Instant::now();
    if buffer.is_empty() {
        return Err(Error::NoData("retraining needs a non-empty buffer".into()));
    }
    model.reinitialize(rng);
    let mut out = finetune(model, buffer, cfg, rng)?;
    out.wall_time = start.elapsed().as_secs_f64();
    Ok(out)
}

/// One Adam step on the current-sample loss, restricted to the selected
/// parameters. Returns the selected indices.
pub fn online_gradient_step<M: ParamModel + ?Sized>(
    model: &mut M,
    adam: &mut AdamState,
    sample: &Sample,
    selection: &SelectionPolicy,
    loss: Loss,
) -> Result<Vec<usize>> {
    let mut grad = vec![0.0; model.n_params()];
    batch_gradient(model, &[sample], loss, &mut grad)?;
    let abs: Vec<f64> = grad.iter().map(|g| g.abs()).collect();
    let selected = selection.select(&abs)?;
    if !selected.is_empty() {
        adam.step_subset(model.params_mut(), &grad, &selected)?;
    }
    Ok(selected)
}
