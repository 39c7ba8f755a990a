//! Neural-ODE models: an [`Mlp`] vector field integrated with classical
//! fixed-step RK4 over a prediction horizon.
//!
//! A sample input is the flat vector `[x0 (n_states), u_0, u_1, ..., u_{h-1}]`
//! with every `u_t` of length `n_exogenous`; the output is
//! `[x_1, ..., x_h]`, time-major. The exogenous input is held constant over
//! each step. With `extra_input` the field also receives a constant `1.0`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::nn::{Mlp, Tape};

/// Scratch buffers for [`rk4_step_in_place`].
#[derive(Clone, Debug, Default)]
pub struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
}

/// Classical RK4 on `x`, with `u` held over the step. `field(x, u, dxdt)`
/// writes the derivative into `dxdt`.
pub fn rk4_step_in_place<F>(scratch: &mut Rk4Scratch, mut field: F, x: &mut [f64], u: &[f64], dt: f64)
where
    F: FnMut(&[f64], &[f64], &mut [f64]),
{
    let n = x.len();
    for buf in [
        &mut scratch.k1,
        &mut scratch.k2,
        &mut scratch.k3,
        &mut scratch.k4,
        &mut scratch.stage,
    ] {
        buf.resize(n, 0.0);
    }
    let Rk4Scratch { k1, k2, k3, k4, stage } = scratch;
    field(x, u, k1);
    for i in 0..n {
        stage[i] = x[i] + 0.5 * dt * k1[i];
    }
    field(stage, u, k2);
    for i in 0..n {
        stage[i] = x[i] + 0.5 * dt * k2[i];
    }
    field(stage, u, k3);
    for i in 0..n {
        stage[i] = x[i] + dt * k3[i];
    }
    field(stage, u, k4);
    for i in 0..n {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// One RK4 step of `dx/dt = f(x, u)`.
pub fn rk4_step<F>(mut f: F, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &[f64]) -> Vec<f64>,
{
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("step size must be positive, got {dt}")));
    }
    let mut next = x.to_vec();
    rk4_step_in_place(
        &mut Rk4Scratch::default(),
        |s, u, out| out.copy_from_slice(&f(s, u)),
        &mut next,
        u,
        dt,
    );
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite state after RK4 step".into()));
    }
    Ok(next)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeModel {
    field: Mlp,
    n_states: usize,
    n_exogenous: usize,
    dt: f64,
    horizon: usize,
    extra_input: bool,
}

/// Recorded field evaluations of one rollout: four stages per step.
struct RolloutTape {
    stages: Vec<[Tape; 4]>,
    output: Vec<f64>,
}

impl NodeModel {
    /// A fresh Xavier-initialized field with the given hidden widths.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_exogenous: usize,
        hidden: &[usize],
        dt: f64,
        horizon: usize,
        extra_input: bool,
        seed: u64,
    ) -> Result<Self> {
        let mut sizes = vec![n_states + n_exogenous + usize::from(extra_input)];
        sizes.extend_from_slice(hidden);
        sizes.push(n_states);
        Self::from_field(Mlp::new(&sizes, seed)?, n_states, n_exogenous, dt, horizon, extra_input)
    }

    pub fn from_field(
        field: Mlp,
        n_states: usize,
        n_exogenous: usize,
        dt: f64,
        horizon: usize,
        extra_input: bool,
    ) -> Result<Self> {
        if n_states == 0 || horizon == 0 {
            return Err(Error::Config("a NODE needs at least one state and one step".into()));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!("NODE step size must be positive, got {dt}")));
        }
        ensure_len(
            "NODE field input width",
            n_states + n_exogenous + usize::from(extra_input),
            field.n_inputs(),
        )?;
        ensure_len("NODE field output width", n_states, field.n_outputs())?;
        Ok(NodeModel {
            field,
            n_states,
            n_exogenous,
            dt,
            horizon,
            extra_input,
        })
    }

    pub fn field(&self) -> &Mlp {
        &self.field
    }

    pub fn field_mut(&mut self) -> &mut Mlp {
        &mut self.field
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_exogenous(&self) -> usize {
        self.n_exogenous
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn extra_input(&self) -> bool {
        self.extra_input
    }

    pub fn n_inputs(&self) -> usize {
        self.n_states + self.horizon * self.n_exogenous
    }

    pub fn n_outputs(&self) -> usize {
        self.n_states * self.horizon
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        ensure_len("NODE sample input", self.n_inputs(), input.len())
    }

    fn field_input(&self, x: &[f64], u: &[f64], buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend_from_slice(x);
        buf.extend_from_slice(u);
        if self.extra_input {
            buf.push(1.0);
        }
    }

    fn exogenous_at<'a>(&self, input: &'a [f64], step: usize) -> &'a [f64] {
        let start = self.n_states + step * self.n_exogenous;
        &input[start..start + self.n_exogenous]
    }

    fn check_finite(state: &[f64], step: usize) -> Result<()> {
        if state.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite NODE state at step {}", step + 1)))
        }
    }

    /// Trajectory `x_1..x_h` from `x0` under the exogenous sequence `u_seq`
    /// (`horizon * n_exogenous` values, time-major).
    pub fn rollout(&self, x0: &[f64], u_seq: &[f64]) -> Result<Vec<f64>> {
        ensure_len("NODE initial state", self.n_states, x0.len())?;
        ensure_len("NODE exogenous sequence", self.horizon * self.n_exogenous, u_seq.len())?;
        let mut input = x0.to_vec();
        input.extend_from_slice(u_seq);
        self.predict(&input)
    }

    /// Same as [`rollout`](Self::rollout) for a packed sample input.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let n = self.n_states;
        let mut x = input[..n].to_vec();
        let mut out = Vec::with_capacity(self.n_outputs());
        let mut scratch = Rk4Scratch::default();
        let mut buf = Vec::new();
        for step in 0..self.horizon {
            let u = self.exogenous_at(input, step);
            rk4_step_in_place(
                &mut scratch,
                |s, u, dxdt| {
                    self.field_input(s, u, &mut buf);
                    let y = self.field.forward(&buf).expect("width checked at construction");
                    dxdt.copy_from_slice(&y);
                },
                &mut x,
                u,
                self.dt,
            );
            Self::check_finite(&x, step)?;
            out.extend_from_slice(&x);
        }
        Ok(out)
    }

    fn rollout_tape(&self, input: &[f64]) -> Result<RolloutTape> {
        self.check_input(input)?;
        let (n, dt) = (self.n_states, self.dt);
        let mut x = input[..n].to_vec();
        let mut output = Vec::with_capacity(self.n_outputs());
        let mut stages = Vec::with_capacity(self.horizon);
        let mut buf = Vec::new();
        let mut stage_x = vec![0.0; n];
        for step in 0..self.horizon {
            let u = self.exogenous_at(input, step);
            self.field_input(&x, u, &mut buf);
            let t1 = self.field.forward_tape_unchecked(&buf);
            for i in 0..n {
                stage_x[i] = x[i] + 0.5 * dt * t1.output()[i];
            }
            self.field_input(&stage_x, u, &mut buf);
            let t2 = self.field.forward_tape_unchecked(&buf);
            for i in 0..n {
                stage_x[i] = x[i] + 0.5 * dt * t2.output()[i];
            }
            self.field_input(&stage_x, u, &mut buf);
            let t3 = self.field.forward_tape_unchecked(&buf);
            for i in 0..n {
                stage_x[i] = x[i] + dt * t3.output()[i];
            }
            self.field_input(&stage_x, u, &mut buf);
            let t4 = self.field.forward_tape_unchecked(&buf);
            for i in 0..n {
                x[i] += dt / 6.0 * (t1.output()[i] + 2.0 * t2.output()[i] + 2.0 * t3.output()[i] + t4.output()[i]);
            }
            Self::check_finite(&x, step)?;
            output.extend_from_slice(&x);
            stages.push([t1, t2, t3, t4]);
        }
        Ok(RolloutTape { stages, output })
    }

    /// Prediction plus `sum_j cot_j * d output_j / d params`, by reverse
    /// accumulation through the unrolled RK4 steps. The gradient is added
    /// into `grad`.
    pub fn vjp(&self, input: &[f64], cot: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        ensure_len("NODE output cotangent", self.n_outputs(), cot.len())?;
        self.backprop(input, &mut |_, c| c.copy_from_slice(cot), grad)
    }

    /// Like [`vjp`](Self::vjp), with the cotangent computed from the
    /// prediction by `cot(output, cot_out)` (one forward pass only).
    pub fn backprop(
        &self,
        input: &[f64],
        cot_fn: &mut dyn FnMut(&[f64], &mut [f64]),
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        ensure_len("NODE gradient buffer", self.field.n_params(), grad.len())?;
        let tape = self.rollout_tape(input)?;
        let mut cot = vec![0.0; self.n_outputs()];
        cot_fn(&tape.output, &mut cot);
        let (n, dt) = (self.n_states, self.dt);
        let width = self.field.n_inputs();
        let mut x_bar = vec![0.0; n];
        let mut k_bar = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut in_bar = vec![0.0; width];
        for step in (0..self.horizon).rev() {
            for i in 0..n {
                x_bar[i] += cot[step * n + i];
            }
            for i in 0..n {
                k_bar[0][i] = dt / 6.0 * x_bar[i];
                k_bar[1][i] = dt / 3.0 * x_bar[i];
                k_bar[2][i] = dt / 3.0 * x_bar[i];
                k_bar[3][i] = dt / 6.0 * x_bar[i];
            }
            let tapes = &tape.stages[step];
            // stage inputs: a2 = x + dt/2 k1, a3 = x + dt/2 k2, a4 = x + dt k3
            let feed = [0.5 * dt, 0.5 * dt, dt];
            for stage in (0..4).rev() {
                self.field
                    .backward(&tapes[stage], &k_bar[stage], grad, Some(&mut in_bar));
                for i in 0..n {
                    x_bar[i] += in_bar[i];
                }
                if stage > 0 {
                    let c = feed[stage - 1];
                    for i in 0..n {
                        k_bar[stage - 1][i] += c * in_bar[i];
                    }
                }
            }
        }
        Ok(tape.output)
    }

    /// Prediction plus the `(l, n_states * horizon)` parameter Jacobian, columns
    /// ordered time-major then state. Computed by propagating the exact
    /// parameter sensitivities of the state through every RK4 stage.
    pub fn jacobian(&self, input: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.check_input(input)?;
        let (n, dt, l) = (self.n_states, self.dt, self.field.n_params());
        let width = self.field.n_inputs();
        let mut h = DMatrix::<f64>::zeros(l, self.n_outputs());
        let mut x = input[..n].to_vec();
        let mut output = Vec::with_capacity(self.n_outputs());
        // sensitivity matrices, n rows of length l
        let mut s = vec![0.0; n * l];
        let mut s_stage = vec![0.0; n * l];
        let mut s_k: [Vec<f64>; 4] = [vec![0.0; n * l], vec![0.0; n * l], vec![0.0; n * l], vec![0.0; n * l]];
        let mut jx = Vec::new();
        let mut jp = Vec::new();
        let mut buf = Vec::new();
        let mut stage_x = x.clone();
        let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let feed = [0.5 * dt, 0.5 * dt, dt];
        for step in 0..self.horizon {
            let u = self.exogenous_at(input, step);
            stage_x.copy_from_slice(&x);
            s_stage.copy_from_slice(&s);
            for stage in 0..4 {
                if stage > 0 {
                    let c = feed[stage - 1];
                    for i in 0..n {
                        stage_x[i] = x[i] + c * k[stage - 1][i];
                    }
                    for (dst, (&base, &prev)) in s_stage.iter_mut().zip(s.iter().zip(&s_k[stage - 1])) {
                        *dst = base + c * prev;
                    }
                }
                self.field_input(&stage_x, u, &mut buf);
                let tape = self.field.forward_tape_unchecked(&buf);
                k[stage].copy_from_slice(tape.output());
                self.field.jacobians_from_tape(&tape, &mut jx, &mut jp);
                let target = &mut s_k[stage];
                target.copy_from_slice(&jp);
                for r in 0..n {
                    let row = &mut target[r * l..(r + 1) * l];
                    for c in 0..n {
                        let coeff = jx[r * width + c];
                        if coeff != 0.0 {
                            for (t, &v) in row.iter_mut().zip(&s_stage[c * l..(c + 1) * l]) {
                                *t += coeff * v;
                            }
                        }
                    }
                }
            }
            for i in 0..n {
                x[i] += dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
            }
            Self::check_finite(&x, step)?;
            output.extend_from_slice(&x);
            let w = dt / 6.0;
            for idx in 0..n * l {
                s[idx] += w * (s_k[0][idx] + 2.0 * s_k[1][idx] + 2.0 * s_k[2][idx] + s_k[3][idx]);
            }
            let hs = h.as_mut_slice();
            let col0 = step * n;
            hs[col0 * l..(col0 + n) * l].copy_from_slice(&s);
        }
        Ok((output, h))
    }
}
