//! Continuous stirred-tank reactor with `A -> B` and `3B <-> C`
//!
//! ```text
//! dC_A/dt = F/V (C_Af - C_A) - r1
//! dC_B/dt = -F/V C_B + r1 - 3 r2
//! dC_C/dt = -F/V C_C + r2
//! r1 = k1 C_A,   r2 = k2f C_B^3 - k2r C_C
//! ```
//!
//! The reverse rate constant `k2r` drifts linearly once the drift starts.
//! Times are in minutes.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DriftTrace, Splits};
use super::{advance, whole_steps, OdeScratch};
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CstrConfig {
    pub flow: f64,
    pub volume: f64,
    pub k1: f64,
    pub k2f: f64,
    pub k2r0: f64,
    /// Change of `k2r` per minute after the drift starts.
    pub k2r_rate: f64,
    pub feed_min: f64,
    pub feed_max: f64,
    /// Minutes each random feed concentration is held.
    pub feed_hold: f64,
    pub sample_interval: f64,
    pub substeps: usize,
    pub train_hours: f64,
    pub validation_hours: f64,
    pub test_hours: f64,
    pub maintenance_hours: f64,
    /// Minutes of constant mid-range feed simulated (and discarded) before t = 0.
    pub warmup: f64,
    pub seed: u64,
}

impl Default for CstrConfig {
    fn default() -> Self {
        CstrConfig {
            flow: 0.6,
            volume: 15.0,
            k1: 0.2,
            k2f: 0.5,
            k2r0: 0.1,
            k2r_rate: 3e-5,
            feed_min: 1.0,
            feed_max: 3.0,
            feed_hold: 30.0,
            sample_interval: 1.0,
            substeps: 10,
            train_hours: 24.0,
            validation_hours: 6.0,
            test_hours: 6.0,
            maintenance_hours: 36.0,
            warmup: 600.0,
            seed: 0,
        }
    }
}

impl CstrConfig {
    /// Minute at which drift begins: the start of the maintenance span.
    pub fn drift_start(&self) -> f64 {
        60.0 * (self.train_hours + self.validation_hours + self.test_hours)
    }

    pub fn k2r_at(&self, t: f64) -> f64 {
        self.k2r0 + self.k2r_rate * (t - self.drift_start()).max(0.0)
    }

    pub fn reaction_rates(&self, c: &[f64], k2r: f64) -> (f64, f64) {
        (self.k1 * c[0], self.k2f * c[1].powi(3) - k2r * c[2])
    }

    pub fn rhs(&self, t: f64, c: &[f64], feed: f64, out: &mut [f64]) {
        let d = self.flow / self.volume;
        let (r1, r2) = self.reaction_rates(c, self.k2r_at(t));
        out[0] = d * (feed - c[0]) - r1;
        out[1] = -d * c[1] + r1 - 3.0 * r2;
        out[2] = -d * c[2] + r2;
    }
}

pub fn simulate_cstr(cfg: &CstrConfig) -> Result<Dataset> {
    simulate_cstr_with(cfg, cfg.substeps)
}

pub fn simulate_cstr_with(cfg: &CstrConfig, substeps: usize) -> Result<Dataset> {
    if !(cfg.flow > 0.0 && cfg.volume > 0.0 && cfg.k1 > 0.0 && cfg.k2f > 0.0 && cfg.k2r0 > 0.0) {
        return Err(Error::Config(
            "CSTR rate constants, flow and volume must be positive".into(),
        ));
    }
    if !(cfg.feed_min <= cfg.feed_max) || !(cfg.feed_hold > 0.0) {
        return Err(Error::Config("invalid feed concentration range or hold".into()));
    }
    let dt = cfg.sample_interval;
    let minutes = |h: f64| 60.0 * h;
    let train_end = whole_steps(minutes(cfg.train_hours), dt, "training span")?;
    let validation_end = train_end + whole_steps(minutes(cfg.validation_hours), dt, "validation span")?;
    let test_end = validation_end + whole_steps(minutes(cfg.test_hours), dt, "test span")?;
    let n = test_end + whole_steps(minutes(cfg.maintenance_hours), dt, "maintenance span")?;
    if n == 0 {
        return Err(Error::Config("CSTR duration must be positive".into()));
    }

    let mut rng = substream(cfg.seed, "cstr-feed");
    let hold_steps = (cfg.feed_hold / dt).round().max(1.0) as usize;
    let mut feed = 0.0;
    let feeds: Vec<f64> = (0..=n)
        .map(|k| {
            if k % hold_steps == 0 {
                feed = rng.gen_range(cfg.feed_min..=cfg.feed_max);
            }
            feed
        })
        .collect();

    let mut scratch = OdeScratch::default();
    let mid = 0.5 * (cfg.feed_min + cfg.feed_max);
    let mut c = [0.0; 3];
    // Warm-up before t = 0 (no drift: k2r_at is flat for negative times).
    let warm = whole_steps(cfg.warmup, dt, "warm-up")?;
    for k in 0..warm {
        let t = -cfg.warmup + k as f64 * dt;
        let mut f = |tt: f64, s: &[f64], d: &mut [f64]| cfg.rhs(tt, s, mid, d);
        advance(&mut f, t, &mut c, dt, substeps, &mut scratch);
    }

    let mut t = Vec::with_capacity(n + 1);
    let mut clean = Vec::with_capacity(n + 1);
    let mut drift = Vec::with_capacity(n + 1);
    for (k, &u) in feeds.iter().enumerate() {
        let tk = k as f64 * dt;
        if c.iter().any(|&v| !(v >= -1e-9)) {
            return Err(Error::Numeric(format!("negative concentration {c:?} at t = {tk}")));
        }
        t.push(tk);
        clean.push(c.to_vec());
        drift.push(cfg.k2r_at(tk));
        if k < n {
            let mut f = |tt: f64, s: &[f64], d: &mut [f64]| cfg.rhs(tt, s, u, d);
            advance(&mut f, tk, &mut c, dt, substeps, &mut scratch);
        }
    }
    let inputs = feeds.iter().map(|&u| vec![u]).collect();
    let mut ds = Dataset::new(
        vec!["C_A".into(), "C_B".into(), "C_C".into()],
        vec!["C_Af".into()],
        t,
        clean,
        inputs,
        Splits {
            train_end,
            validation_end,
            test_end,
        },
    )?;
    ds.drift = Some(DriftTrace {
        name: "k2r".into(),
        values: drift,
    });
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_reaction_rate() {
        let cfg = CstrConfig::default();
        assert!((cfg.reaction_rates(&[1.0, 0.0, 0.0], 0.1).0 - 0.2).abs() < 1e-15);
    }

    #[test]
    fn steady_feed_gives_analytic_c_a() {
        let cfg = CstrConfig {
            feed_min: 3.0,
            feed_max: 3.0,
            train_hours: 10.0,
            validation_hours: 0.0,
            test_hours: 0.0,
            maintenance_hours: 0.0,
            ..Default::default()
        };
        let ds = simulate_cstr(&cfg).unwrap();
        let c_a = ds.clean.last().unwrap()[0];
        assert!((c_a - 0.5).abs() < 1e-9, "{c_a}");
    }

    #[test]
    fn drift_is_linear_after_start() {
        let cfg = CstrConfig::default();
        let t0 = cfg.drift_start();
        assert_eq!(cfg.k2r_at(0.0), 0.1);
        assert_eq!(cfg.k2r_at(t0), 0.1);
        assert!((cfg.k2r_at(t0 + 1000.0) - 0.13).abs() < 1e-14);
    }

    #[test]
    fn layout_and_positivity() {
        let ds = simulate_cstr(&CstrConfig::default()).unwrap();
        assert_eq!(ds.splits.train_end, 1440);
        assert_eq!(ds.splits.validation_end, 1800);
        assert_eq!(ds.splits.test_end, 2160);
        assert_eq!(ds.len(), 4321);
        assert!(ds.clean.iter().flatten().all(|&c| c >= 0.0));
        assert!(ds.inputs.iter().all(|u| (1.0..=3.0).contains(&u[0])));
    }
}
