//! The one-dimensional two-timescale system
//!
//! ```text
//! dp/dt = eps (x - p)
//! dx/dt = -p x + 1 + u,    u(t) = slope * t
//! ```
//!
//! with the slow state `p` hidden from the model.

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DriftTrace, Splits};
use super::{advance, whole_steps, OdeScratch};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoTimescaleConfig {
    pub epsilon: f64,
    pub x0: f64,
    pub p0: f64,
    pub input_slope: f64,
    pub sample_interval: f64,
    pub duration: f64,
    pub substeps: usize,
    pub train_end_time: f64,
    pub validation_end_time: f64,
}

impl Default for TwoTimescaleConfig {
    fn default() -> Self {
        TwoTimescaleConfig {
            epsilon: 0.01,
            x0: 0.0,
            p0: 1.0,
            input_slope: -0.01,
            sample_interval: 0.1,
            duration: 100.0,
            substeps: 10,
            train_end_time: 15.0,
            validation_end_time: 20.0,
        }
    }
}

impl TwoTimescaleConfig {
    pub fn input(&self, t: f64) -> f64 {
        self.input_slope * t
    }

    /// Right-hand side for the state `[x, p]`.
    pub fn rhs(&self, t: f64, state: &[f64], out: &mut [f64]) {
        let (x, p) = (state[0], state[1]);
        out[0] = -p * x + 1.0 + self.input(t);
        out[1] = self.epsilon * (x - p);
    }

    fn check(&self) -> Result<()> {
        if !(self.duration > 0.0) || !(self.sample_interval > 0.0) {
            return Err(Error::Config("duration and sample interval must be positive".into()));
        }
        if !(self.train_end_time <= self.validation_end_time && self.validation_end_time <= self.duration) {
            return Err(Error::Config(
                "split times must satisfy train <= validation <= duration".into(),
            ));
        }
        Ok(())
    }
}

/// Full `[x, p]` trajectory on the sample grid.
fn trajectory(cfg: &TwoTimescaleConfig, substeps: usize) -> Result<(Vec<f64>, Vec<[f64; 2]>)> {
    cfg.check()?;
    let n = whole_steps(cfg.duration, cfg.sample_interval, "duration")?;
    let mut scratch = OdeScratch::default();
    let mut f = |t: f64, s: &[f64], d: &mut [f64]| cfg.rhs(t, s, d);
    let mut state = [cfg.x0, cfg.p0];
    let mut t = Vec::with_capacity(n + 1);
    let mut rows = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let tk = k as f64 * cfg.sample_interval;
        t.push(tk);
        rows.push(state);
        if k < n {
            advance(&mut f, tk, &mut state, cfg.sample_interval, substeps, &mut scratch);
        }
    }
    Ok((t, rows))
}

/// Like [`simulate_two_timescale`] but with an explicit number of RK4
/// substeps per sample; used for refinement studies.
pub fn simulate_two_timescale_with(cfg: &TwoTimescaleConfig, substeps: usize) -> Result<Dataset> {
    let (t, rows) = trajectory(cfg, substeps)?;
    let clean = rows.iter().map(|r| vec![r[0]]).collect();
    let inputs = t.iter().map(|&tk| vec![cfg.input(tk)]).collect();
    let train_end = whole_steps(cfg.train_end_time, cfg.sample_interval, "train end")?;
    let validation_end = whole_steps(cfg.validation_end_time, cfg.sample_interval, "validation end")?;
    let mut ds = Dataset::new(
        vec!["x".into()],
        vec!["u".into()],
        t,
        clean,
        inputs,
        Splits {
            train_end,
            validation_end,
            test_end: validation_end,
        },
    )?;
    ds.drift = Some(DriftTrace {
        name: "p".into(),
        values: rows.iter().map(|r| r[1]).collect(),
    });
    Ok(ds)
}

pub fn simulate_two_timescale(cfg: &TwoTimescaleConfig) -> Result<Dataset> {
    simulate_two_timescale_with(cfg, cfg.substeps)
}

/// Trajectory of the fast state on the sample grid with switch times.
#[derive(Clone, Debug, PartialEq)]
pub struct HeldTrajectory {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    /// Times at which the frozen slow parameter was refreshed (excluding t = 0).
    pub switch_times: Vec<f64>,
}

/// Fast subsystem `dx/dt = -p x + 1 + u(t)` with `p` frozen at `p_frozen`.
pub fn layer_equation(cfg: &TwoTimescaleConfig, p_frozen: f64) -> Result<HeldTrajectory> {
    held(cfg, cfg.duration, |_| p_frozen)
}

/// Sample-and-hold scheme: the fast subsystem is integrated over consecutive
/// intervals of length `hold`, with `p` frozen at the true `p(t_j)` sampled at
/// the start of each interval and the terminal state of one interval used as
/// the initial condition of the next.
pub fn sample_and_hold_reference(cfg: &TwoTimescaleConfig, hold: f64) -> Result<HeldTrajectory> {
    if !(hold > 0.0) {
        return Err(Error::Domain(format!("hold interval must be positive, got {hold}")));
    }
    let (_, truth) = trajectory(cfg, cfg.substeps)?;
    held(cfg, hold, |k| truth[k][1])
}

fn held(cfg: &TwoTimescaleConfig, hold: f64, p_at: impl Fn(usize) -> f64) -> Result<HeldTrajectory> {
    cfg.check()?;
    let n = whole_steps(cfg.duration, cfg.sample_interval, "duration")?;
    let per_hold = if hold >= cfg.duration {
        n.max(1)
    } else {
        whole_steps(hold, cfg.sample_interval, "hold interval")?.max(1)
    };
    let mut scratch = OdeScratch::default();
    let mut x = [cfg.x0];
    let mut p = p_at(0);
    let (mut t, mut xs, mut switches) = (Vec::with_capacity(n + 1), Vec::with_capacity(n + 1), Vec::new());
    for k in 0..=n {
        let tk = k as f64 * cfg.sample_interval;
        if k > 0 && k % per_hold == 0 && k < n {
            p = p_at(k);
            switches.push(tk);
        }
        t.push(tk);
        xs.push(x[0]);
        if k < n {
            let mut f = |tt: f64, s: &[f64], d: &mut [f64]| d[0] = -p * s[0] + 1.0 + cfg.input(tt);
            advance(&mut f, tk, &mut x, cfg.sample_interval, cfg.substeps, &mut scratch);
        }
    }
    Ok(HeldTrajectory {
        t,
        x: xs,
        switch_times: switches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_slope_is_one() {
        let cfg = TwoTimescaleConfig::default();
        let mut d = [0.0; 2];
        cfg.rhs(0.0, &[0.0, 1.0], &mut d);
        assert_eq!(d, [1.0, -0.01]);
    }

    #[test]
    fn splits_follow_sample_counts() {
        let ds = simulate_two_timescale(&TwoTimescaleConfig::default()).unwrap();
        assert_eq!(ds.len(), 1001);
        assert_eq!(ds.splits.train_end, 150);
        assert_eq!(ds.splits.validation_end, 200);
        assert_eq!(ds.maintenance(), 200..1001);
        assert!((ds.t[200] - 20.0).abs() < 1e-12);
    }

    #[test]
    fn frozen_slow_state_without_coupling() {
        let cfg = TwoTimescaleConfig {
            epsilon: 0.0,
            ..Default::default()
        };
        let ds = simulate_two_timescale(&cfg).unwrap();
        assert!(ds.drift.unwrap().values.iter().all(|&p| p == 1.0));
        let sh = sample_and_hold_reference(&cfg, 25.0).unwrap();
        let layer = layer_equation(&cfg, 1.0).unwrap();
        assert_eq!(sh.x, layer.x);
        let direct: Vec<f64> = ds.clean.iter().map(|r| r[0]).collect();
        assert_eq!(sh.x, direct);
    }

    #[test]
    fn hold_switches() {
        let sh = sample_and_hold_reference(&TwoTimescaleConfig::default(), 25.0).unwrap();
        assert_eq!(sh.switch_times.len(), 3);
        for (s, want) in sh.switch_times.iter().zip([25.0, 50.0, 75.0]) {
            assert!((s - want).abs() < 1e-9);
        }
        assert!(sample_and_hold_reference(&TwoTimescaleConfig::default(), 0.0).is_err());
    }
}
