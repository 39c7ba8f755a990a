use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

/// Bias-corrected Adam optimizer state for a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One update of every parameter.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        ensure_len("adam params", self.m.len(), params.len())?;
        ensure_len("adam gradient", self.m.len(), grad.len())?;
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient at index {i}")));
        }
        self.step += 1;
        let (c1, c2) = self.corrections();
        for i in 0..params.len() {
            self.update(i, params, grad[i], c1, c2);
        }
        Ok(())
    }

    /// One update restricted to `indices`; every other parameter and its
    /// moments are left untouched.
    pub fn step_subset(&mut self, params: &mut [f64], grad: &[f64], indices: &[usize]) -> Result<()> {
        ensure_len("adam params", self.m.len(), params.len())?;
        ensure_len("adam gradient", self.m.len(), grad.len())?;
        if let Some(&i) = indices.iter().find(|&&i| i >= params.len()) {
            return Err(Error::Domain(format!("parameter index {i} out of range")));
        }
        if let Some(&i) = indices.iter().find(|&&i| !grad[i].is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient at index {i}")));
        }
        self.step += 1;
        let (c1, c2) = self.corrections();
        for &i in indices {
            self.update(i, params, grad[i], c1, c2);
        }
        Ok(())
    }

    fn corrections(&self) -> (f64, f64) {
        let t = self.step as i32;
        (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t))
    }

    #[inline]
    fn update(&mut self, i: usize, params: &mut [f64], g: f64, c1: f64, c2: f64) {
        self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
        self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
        let m_hat = self.m[i] / c1;
        let v_hat = self.v[i] / c2;
        params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
    }
}
