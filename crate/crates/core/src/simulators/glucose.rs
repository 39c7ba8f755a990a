//! Glucose-insulin model of a type II diabetic patient
//!
//! ```text
//! dG/dt    = -p1 (G - Gb) - si X G + (f kabs / VG) Ggut
//! dX/dt    = -p2 (X - I - Ib)
//! dI/dt    = U - ke I
//! dq1/dt   = D - kemp q1
//! dq2/dt   = kemp (q1 - q2)
//! dGgut/dt = kemp q2 - kabs Ggut
//! ```
//!
//! Meals arrive at random times in three daily windows. Insulin follows a
//! bounded random walk, suppressed when glucose runs low, and small rescue
//! carbohydrate doses are taken when glucose is very low. Insulin
//! sensitivity `si` decreases linearly during the maintenance span.
//! Times are in minutes; one sample per minute.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DriftTrace, Splits};
use super::{advance, OdeScratch};
use crate::error::{Error, Result};
use crate::rng::{substream, Rng};

const MINUTES_PER_DAY: f64 = 1440.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlucoseParams {
    pub p1: f64,
    pub gb: f64,
    pub si: f64,
    /// `f kabs / VG`.
    pub gut_gain: f64,
    pub p2: f64,
    pub ib: f64,
    pub ke: f64,
    pub kemp: f64,
    pub kabs: f64,
}

impl Default for GlucoseParams {
    fn default() -> Self {
        GlucoseParams {
            p1: 1.57e-2,
            gb: 100.0,
            si: 0.5,
            gut_gain: 0.08,
            p2: 1.23e-2,
            ib: 0.04,
            ke: 1.82e-2,
            kemp: 0.18,
            kabs: 0.012,
        }
    }
}

impl GlucoseParams {
    /// Right-hand side for `[G, X, I, q1, q2, Ggut]` with inputs `[U, D]`.
    pub fn rhs(&self, si: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        let (g, xx, i, q1, q2, gut) = (x[0], x[1], x[2], x[3], x[4], x[5]);
        out[0] = -self.p1 * (g - self.gb) - si * xx * g + self.gut_gain * gut;
        out[1] = -self.p2 * (xx - i - self.ib);
        out[2] = u[0] - self.ke * i;
        out[3] = u[1] - self.kemp * q1;
        out[4] = self.kemp * (q1 - q2);
        out[5] = self.kemp * q2 - self.kabs * gut;
    }
}

/// A meal window: uniform start time within `[start_hour, end_hour]`, size
/// normal with the given mean and standard deviation (grams, truncated at 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MealWindow {
    pub start_hour: f64,
    pub end_hour: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meal {
    /// Minutes since the start of the simulation.
    pub time: f64,
    pub grams: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlucoseConfig {
    pub params: GlucoseParams,
    pub meals: Vec<MealWindow>,
    pub insulin_max: f64,
    pub carbs_max: f64,
    /// Initial insulin delivery rate and per-minute random-walk step std.
    pub insulin_start: f64,
    pub insulin_step_std: f64,
    /// Below this glucose, insulin ramps to zero and stays off for `suppress_minutes`.
    pub low_glucose: f64,
    pub suppress_minutes: f64,
    pub ramp_minutes: f64,
    /// Below this glucose, `rescue_grams` are added to the carbohydrate input.
    pub rescue_glucose: f64,
    pub rescue_grams: f64,
    pub train_days: f64,
    pub validation_days: f64,
    pub test_days: f64,
    pub maintenance_days: f64,
    /// Change of `si` per minute during the maintenance span.
    pub si_rate: f64,
    pub substeps: usize,
    pub initial_state: [f64; 6],
    pub seed: u64,
}

impl Default for GlucoseConfig {
    fn default() -> Self {
        GlucoseConfig {
            params: GlucoseParams::default(),
            meals: vec![
                MealWindow {
                    start_hour: 6.0,
                    end_hour: 9.0,
                    mean: 60.0,
                    std: 20.0,
                },
                MealWindow {
                    start_hour: 11.0,
                    end_hour: 13.0,
                    mean: 90.0,
                    std: 30.0,
                },
                MealWindow {
                    start_hour: 17.0,
                    end_hour: 20.0,
                    mean: 90.0,
                    std: 30.0,
                },
            ],
            insulin_max: 0.1,
            carbs_max: 200.0,
            insulin_start: 0.0,
            insulin_step_std: 5e-5,
            low_glucose: 85.0,
            suppress_minutes: 45.0,
            ramp_minutes: 15.0,
            rescue_glucose: 70.0,
            rescue_grams: 2.0,
            train_days: 1460.0,
            validation_days: 182.5,
            test_days: 182.5,
            maintenance_days: 365.0,
            si_rate: -0.2 / (365.0 * MINUTES_PER_DAY),
            substeps: 10,
            initial_state: [100.0, 0.04, 0.0, 0.0, 0.0, 0.0],
            seed: 0,
        }
    }
}

impl GlucoseConfig {
    /// Shrinks every span by `scale` while keeping the drift per minute.
    pub fn scaled(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::Config(format!("scale must lie in (0, 1], got {scale}")));
        }
        self.train_days *= scale;
        self.validation_days *= scale;
        self.test_days *= scale;
        self.maintenance_days *= scale;
        Ok(self)
    }

    fn minutes(days: f64) -> usize {
        (days * MINUTES_PER_DAY).round() as usize
    }

    pub fn drift_start(&self) -> f64 {
        Self::minutes(self.train_days + self.validation_days + self.test_days) as f64
    }

    pub fn si_at(&self, t: f64) -> f64 {
        self.params.si + self.si_rate * (t - self.drift_start()).max(0.0)
    }
}

/// Three meals for day `day_index`: times uniform in each window, sizes
/// normal and truncated at zero.
pub fn generate_meals(windows: &[MealWindow], day_index: usize, rng: &mut Rng) -> Vec<Meal> {
    let day0 = day_index as f64 * MINUTES_PER_DAY;
    windows
        .iter()
        .map(|w| {
            let hour = rng.gen_range(w.start_hour..=w.end_hour);
            let grams = Normal::new(w.mean, w.std.max(0.0)).map_or(w.mean, |n| n.sample(rng));
            Meal {
                time: day0 + 60.0 * hour,
                grams: grams.max(0.0),
            }
        })
        .collect()
}

pub fn simulate_glucose(cfg: &GlucoseConfig) -> Result<Dataset> {
    simulate_glucose_with(cfg, cfg.substeps)
}

pub fn simulate_glucose_with(cfg: &GlucoseConfig, substeps: usize) -> Result<Dataset> {
    let train_end = GlucoseConfig::minutes(cfg.train_days);
    let validation_end = GlucoseConfig::minutes(cfg.train_days + cfg.validation_days);
    let test_end = GlucoseConfig::minutes(cfg.train_days + cfg.validation_days + cfg.test_days);
    let n = GlucoseConfig::minutes(cfg.train_days + cfg.validation_days + cfg.test_days + cfg.maintenance_days);
    if n < 1440 {
        return Err(Error::Config("glucose simulation needs at least one day".into()));
    }
    if !(cfg.insulin_max > 0.0 && cfg.carbs_max > 0.0 && cfg.insulin_step_std >= 0.0) {
        return Err(Error::Config("insulin and carbohydrate bounds must be positive".into()));
    }

    let mut meal_rng = substream(cfg.seed, "meals");
    let mut insulin_rng = substream(cfg.seed, "insulin");
    let step = Normal::new(0.0, cfg.insulin_step_std).map_err(|e| Error::Config(e.to_string()))?;
    let days = n.div_ceil(1440) + 1;
    let mut carbs = vec![0.0; n + 1];
    for day in 0..days {
        for meal in generate_meals(&cfg.meals, day, &mut meal_rng) {
            let k = meal.time.floor() as usize;
            if k <= n {
                carbs[k] = (carbs[k] + meal.grams).min(cfg.carbs_max);
            }
        }
    }

    let mut scratch = OdeScratch::default();
    let mut x = cfg.initial_state;
    let mut walk = cfg.insulin_start.clamp(0.0, cfg.insulin_max);
    let mut gain: f64 = 1.0;
    let mut suppressed_until = -1.0;
    let p = &cfg.params;

    let mut t = Vec::with_capacity(n + 1);
    let mut clean = Vec::with_capacity(n + 1);
    let mut inputs = Vec::with_capacity(n + 1);
    let mut drift = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let tk = k as f64;
        let g = x[0];
        if g < cfg.low_glucose {
            suppressed_until = tk + cfg.suppress_minutes;
        }
        if tk < suppressed_until {
            gain = (gain - 1.0 / cfg.ramp_minutes.max(1.0)).max(0.0);
        } else {
            gain = 1.0;
        }
        // Reflecting random walk inside [0, insulin_max].
        walk += step.sample(&mut insulin_rng);
        if walk < 0.0 {
            walk = -walk;
        }
        if walk > cfg.insulin_max {
            walk = 2.0 * cfg.insulin_max - walk;
        }
        walk = walk.clamp(0.0, cfg.insulin_max);
        let mut d = carbs[k];
        if g < cfg.rescue_glucose {
            d = (d + cfg.rescue_grams).min(cfg.carbs_max);
        }
        let u = [walk * gain, d];
        let si = cfg.si_at(tk);

        t.push(tk);
        clean.push(x.to_vec());
        inputs.push(u.to_vec());
        drift.push(si);
        if k < n {
            // `si` varies by ~1e-9 per minute; holding it over the step is exact to that order.
            let mut f = |_tt: f64, s: &[f64], dx: &mut [f64]| p.rhs(si, s, &u, dx);
            advance(&mut f, tk, &mut x, 1.0, substeps, &mut scratch);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("glucose state diverged at minute {k}")));
            }
        }
    }
    let mut ds = Dataset::new(
        ["G", "X", "I", "q1", "q2", "G_gut"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        vec!["U".into(), "D".into()],
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
        name: "si".into(),
        values: drift,
    });
    Ok(ds)
}
