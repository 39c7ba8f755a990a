//! Ground-truth simulators for the drift case studies and the dataset
//! plumbing shared by all of them.

pub mod cstr;
pub mod dataset;
pub mod glucose;
pub mod two_timescale;

pub use cstr::{simulate_cstr, simulate_cstr_with, CstrConfig};
pub use dataset::{
    add_noise, horizon_truth, horizon_window, horizon_windows, ingest_csv_stream, one_step_samples, one_step_truth,
    read_csv, CsvSchema, Dataset, DriftTrace, Splits,
};
pub use glucose::{generate_meals, simulate_glucose, simulate_glucose_with, GlucoseConfig, GlucoseParams, Meal};
pub use two_timescale::{
    layer_equation, sample_and_hold_reference, simulate_two_timescale, simulate_two_timescale_with, HeldTrajectory,
    TwoTimescaleConfig,
};

/// Scratch space for [`rk4`].
#[derive(Clone, Debug, Default)]
pub(crate) struct OdeScratch {
    k: [Vec<f64>; 4],
    stage: Vec<f64>,
}

/// One classical RK4 step of the non-autonomous system `f(t, x, dxdt)`.
pub(crate) fn rk4<F>(f: &mut F, t: f64, x: &mut [f64], h: f64, s: &mut OdeScratch)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = x.len();
    for buf in s.k.iter_mut().chain(std::iter::once(&mut s.stage)) {
        buf.resize(n, 0.0);
    }
    let OdeScratch { k, stage } = s;
    let [k1, k2, k3, k4] = k;
    f(t, x, k1);
    for i in 0..n {
        stage[i] = x[i] + 0.5 * h * k1[i];
    }
    f(t + 0.5 * h, stage, k2);
    for i in 0..n {
        stage[i] = x[i] + 0.5 * h * k2[i];
    }
    f(t + 0.5 * h, stage, k3);
    for i in 0..n {
        stage[i] = x[i] + h * k3[i];
    }
    f(t + h, stage, k4);
    for i in 0..n {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Advances `x` from `t` by `dt` in `substeps` equal RK4 steps.
pub(crate) fn advance<F>(f: &mut F, t: f64, x: &mut [f64], dt: f64, substeps: usize, s: &mut OdeScratch)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let substeps = substeps.max(1);
    let h = dt / substeps as f64;
    for i in 0..substeps {
        rk4(f, t + i as f64 * h, x, h, s);
    }
}

/// Number of whole sample intervals in `span`, rejecting spans that are not
/// (numerically) a multiple of `interval`.
pub(crate) fn whole_steps(span: f64, interval: f64, what: &str) -> crate::Result<usize> {
    let n = span / interval;
    let rounded = n.round();
    if !(interval > 0.0) || !(span >= 0.0) || (n - rounded).abs() > 1e-9 * rounded.max(1.0) {
        return Err(crate::Error::Config(format!(
            "{what} ({span}) must be a non-negative multiple of the sample interval ({interval})"
        )));
    }
    Ok(rounded as usize)
}
