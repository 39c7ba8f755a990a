use serde::{Deserialize, Serialize};

/// Learning-rate reduction when the monitored loss stops improving.
///
/// An epoch counts as an improvement when its loss is below
/// `best * (1 - rel_threshold)`. After `patience` consecutive epochs without
/// improvement the rate is multiplied by `factor` and the counter restarts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub rel_threshold: f64,
    pub min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> Self {
        PlateauScheduler {
            factor,
            patience,
            rel_threshold: 1e-4,
            min_lr: 0.0,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn bad_epochs(&self) -> usize {
        self.bad_epochs
    }

    /// Records one epoch loss and returns the (possibly reduced) learning rate.
    pub fn update(&mut self, epoch_loss: f64, lr: f64) -> f64 {
        if epoch_loss < self.best * (1.0 - self.rel_threshold) {
            self.best = epoch_loss;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            return (lr * self.factor).max(self.min_lr).min(lr);
        }
        lr
    }
}
