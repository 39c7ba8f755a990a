//! Gradient-of-loss parameter selection.
//!
//! `Prop(q)` keeps the parameters whose |dL/dparam| is strictly above the
//! q-quantile of the current gradient magnitudes, so it selects a fixed
//! share of the parameters. `Mag(q)` compares against a fixed threshold, the
//! q-quantile of the validation-loss gradient at the trained parameters, so
//! the number of selected parameters varies from step to step.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParamModel, Sample};

/// Linear-interpolation quantile: rank `h = q (n - 1)` on the sorted values.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("quantile of an empty vector".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("quantile level {q} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let v_lo = sorted[lo];
    if lo + 1 >= sorted.len() || frac == 0.0 {
        return Ok(v_lo);
    }
    Ok(v_lo + frac * (sorted[lo + 1] - v_lo))
}

/// Indices strictly above the q-quantile of `grad_abs`.
pub fn select_prop(grad_abs: &[f64], q: f64) -> Result<Vec<usize>> {
    let threshold = quantile(grad_abs, q)?;
    Ok(select_mag(grad_abs, threshold))
}

/// Indices strictly above `threshold`.
pub fn select_mag(grad_abs: &[f64], threshold: f64) -> Vec<usize> {
    grad_abs
        .iter()
        .enumerate()
        .filter(|(_, &g)| g > threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Absolute gradient of the mean validation MSE at the current parameters.
pub fn validation_gradient_abs<M: ParamModel + ?Sized>(model: &M, validation: &[Sample]) -> Result<Vec<f64>> {
    if validation.is_empty() {
        return Err(Error::NoData("empty validation set".into()));
    }
    let n_out = model.n_outputs();
    let scale = -2.0 / (n_out as f64 * validation.len() as f64);
    let mut grad = vec![0.0; model.n_params()];
    let mut cot = vec![0.0; n_out];
    for sample in validation {
        let pred = model.predict(&sample.input)?;
        crate::error::ensure_len("validation target", n_out, sample.target.len())?;
        for j in 0..n_out {
            cot[j] = scale * (sample.target[j] - pred[j]);
        }
        model.vjp(&sample.input, &cot, &mut grad)?;
    }
    Ok(grad.into_iter().map(f64::abs).collect())
}

/// The Mag threshold: q-quantile of the validation-loss gradient magnitudes.
pub fn fit_mag_threshold<M: ParamModel + ?Sized>(model: &M, validation: &[Sample], q: f64) -> Result<f64> {
    quantile(&validation_gradient_abs(model, validation)?, q)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionPolicy {
    All,
    Prop { q: f64 },
    Mag { q: f64, threshold: Option<f64> },
}

impl SelectionPolicy {
    pub fn prop(q: f64) -> Result<Self> {
        check_level(q)?;
        Ok(SelectionPolicy::Prop { q })
    }

    pub fn mag(q: f64) -> Result<Self> {
        check_level(q)?;
        Ok(SelectionPolicy::Mag { q, threshold: None })
    }

    pub fn mag_with_threshold(q: f64, threshold: f64) -> Result<Self> {
        check_level(q)?;
        if !(threshold >= 0.0) {
            return Err(Error::Domain(format!("Mag threshold must be >= 0, got {threshold}")));
        }
        Ok(SelectionPolicy::Mag {
            q,
            threshold: Some(threshold),
        })
    }

    pub fn needs_fit(&self) -> bool {
        matches!(self, SelectionPolicy::Mag { threshold: None, .. })
    }

    /// Fits the Mag threshold on a validation set; no-op for other kinds.
    pub fn fit<M: ParamModel + ?Sized>(&mut self, model: &M, validation: &[Sample]) -> Result<()> {
        if let SelectionPolicy::Mag { q, threshold } = self {
            *threshold = Some(fit_mag_threshold(model, validation, *q)?);
        }
        Ok(())
    }

    pub fn select(&self, grad_abs: &[f64]) -> Result<Vec<usize>> {
        match *self {
            SelectionPolicy::All => Ok((0..grad_abs.len()).collect()),
            SelectionPolicy::Prop { q } => select_prop(grad_abs, q),
            SelectionPolicy::Mag { threshold: Some(t), .. } => Ok(select_mag(grad_abs, t)),
            SelectionPolicy::Mag { threshold: None, q } => Err(Error::Config(format!(
                "Mag policy (q = {q}) used before its threshold was fitted"
            ))),
        }
    }

    /// Short label used in file names and tables, e.g. `prop0.95`.
    pub fn label(&self) -> String {
        match self {
            SelectionPolicy::All => "all".into(),
            SelectionPolicy::Prop { q } => format!("prop{q}"),
            SelectionPolicy::Mag { q, .. } => format!("mag{q}"),
        }
    }
}

fn check_level(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("selection level must lie in (0, 1), got {q}")))
    }
}

impl fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionPolicy::All => write!(f, "all"),
            SelectionPolicy::Prop { q } => write!(f, "prop:{q}"),
            SelectionPolicy::Mag { q, .. } => write!(f, "mag:{q}"),
        }
    }
}

impl FromStr for SelectionPolicy {
    type Err = Error;

    /// Accepts `all`, `prop:<q>`, and `mag:<q>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(SelectionPolicy::All);
        }
        let (kind, level) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("unknown selection `{s}`; expected all, prop:<q> or mag:<q>")))?;
        let q: f64 = level
            .parse()
            .map_err(|_| Error::Config(format!("bad selection level in `{s}`")))?;
        match kind.to_ascii_lowercase().as_str() {
            "prop" => SelectionPolicy::prop(q),
            "mag" => SelectionPolicy::mag(q),
            _ => Err(Error::Config(format!("unknown selection kind `{kind}`"))),
        }
    }
}
