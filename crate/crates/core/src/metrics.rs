//! Error, skill and timing metrics, z-score scaling, and confidence intervals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::NoData("metric of an empty vector".into()));
    }
    crate::error::ensure_len("metric operands", truth.len(), pred.len())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Deviations divided by the channel std; `pred` and `truth` are rows of
/// `scaler.width()` values laid end to end.
fn scaled_deviations<'a>(
    pred: &'a [f64],
    truth: &'a [f64],
    scaler: &'a Scaler,
) -> Result<impl Iterator<Item = f64> + 'a> {
    check_pair(pred, truth)?;
    if scaler.width() == 0 || !pred.len().is_multiple_of(scaler.width()) {
        return Err(Error::shape("normalized metric rows", scaler.width(), pred.len()));
    }
    let w = scaler.width();
    Ok(pred
        .iter()
        .zip(truth)
        .enumerate()
        .map(move |(i, (p, t))| (p - t) / scaler.std[i % w]))
}

/// MAE in normalized units.
pub fn nmae(pred: &[f64], truth: &[f64], scaler: &Scaler) -> Result<f64> {
    Ok(scaled_deviations(pred, truth, scaler)?.map(f64::abs).sum::<f64>() / pred.len() as f64)
}

/// MSE in normalized units.
pub fn nmse(pred: &[f64], truth: &[f64], scaler: &Scaler) -> Result<f64> {
    Ok(scaled_deviations(pred, truth, scaler)?.map(|d| d * d).sum::<f64>() / pred.len() as f64)
}

/// Forecast skill score `1 - loss / loss_reference`.
pub fn fss(loss: f64, loss_reference: f64) -> Result<f64> {
    if !(loss_reference > 0.0) {
        return Err(Error::Domain(format!(
            "skill score needs a positive reference loss, got {loss_reference}"
        )));
    }
    Ok(1.0 - loss / loss_reference)
}

/// Mean time per iteration.
pub fn mtpi(iter_times: &[f64]) -> Result<f64> {
    if iter_times.is_empty() {
        return Err(Error::NoData("no iteration times".into()));
    }
    if let Some(t) = iter_times.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::Domain(format!("iteration time must be >= 0, got {t}")));
    }
    Ok(iter_times.iter().sum::<f64>() / iter_times.len() as f64)
}

/// Coefficient of variation (sample std / mean).
pub fn coefficient_of_variation(values: &[f64]) -> Result<f64> {
    let (mean, std) = mean_std(values)?;
    if mean == 0.0 {
        return Err(Error::Domain("coefficient of variation of zero-mean values".into()));
    }
    Ok(std / mean)
}

fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::NoData(format!("need at least 2 values, got {}", values.len())));
    }
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok((mean, var.sqrt()))
}

/// Summary of a metric evaluated over windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
    pub values: Vec<f64>,
}

/// Mean and `1.96 s / sqrt(m)` over the window values.
pub fn summarize(metric: &str, values: &[f64]) -> Result<MetricRecord> {
    let (mean, std) = mean_std(values)?;
    Ok(MetricRecord {
        metric: metric.to_string(),
        mean,
        ci95: 1.96 * std / (values.len() as f64).sqrt(),
        values: values.to_vec(),
    })
}

/// Per-window skill scores of `loss` against `reference`.
pub fn windowed_fss(loss: &[f64], reference: &[f64]) -> Result<Vec<f64>> {
    crate::error::ensure_len("windowed skill", reference.len(), loss.len())?;
    loss.iter().zip(reference).map(|(&l, &r)| fss(l, r)).collect()
}

/// Averages consecutive blocks of `block` values; a short tail block is kept.
pub fn block_means(values: &[f64], block: usize) -> Vec<f64> {
    values
        .chunks(block.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// Per-channel z-score scaler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Fits on rows of equal width. Constant channels get `std = 1`.
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::NoData(format!(
                "scaler fit needs at least 2 rows, got {}",
                rows.len()
            )));
        }
        let width = rows[0].as_ref().len();
        if rows.iter().any(|r| r.as_ref().len() != width) {
            return Err(Error::Schema("scaler rows differ in width".into()));
        }
        let m = rows.len() as f64;
        let mut mean = vec![0.0; width];
        for r in rows {
            for (acc, v) in mean.iter_mut().zip(r.as_ref()) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        let mut var = vec![0.0; width];
        for r in rows {
            for ((acc, v), mu) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *acc += (v - mu).powi(2);
            }
        }
        let std = var
            .into_iter()
            .enumerate()
            .map(|(j, v)| {
                let s = (v / m).sqrt();
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    log::warn!("scaler channel {j} is constant; using unit scale");
                    1.0
                }
            })
            .collect();
        Ok(Scaler { mean, std })
    }

    pub fn identity(width: usize) -> Self {
        Scaler {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}
