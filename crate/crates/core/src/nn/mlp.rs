//! Dense feed-forward network with a flat parameter vector.
//!
//! Layout of the flat vector: for every layer in order, the weight block
//! `(n_out, n_in)` in row-major order followed by the `n_out` biases. Hidden
//! layers use the logistic sigmoid, the output layer is linear.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::rng::{self, Rng};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const ACTIVATION_TAG: &str = "sigmoid";

/// Number of parameters of a network with the given layer sizes.
pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// One unflattened layer: `weights` is `(n_out, n_in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpDocument", into = "MlpDocument")]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

/// On-disk representation of an [`Mlp`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MlpDocument {
    pub format_version: u32,
    pub layer_sizes: Vec<usize>,
    pub activation: String,
    pub params: Vec<f64>,
}

impl From<Mlp> for MlpDocument {
    fn from(mlp: Mlp) -> Self {
        MlpDocument {
            format_version: MODEL_FORMAT_VERSION,
            layer_sizes: mlp.layer_sizes,
            activation: ACTIVATION_TAG.to_string(),
            params: mlp.params,
        }
    }
}

impl TryFrom<MlpDocument> for Mlp {
    type Error = Error;

    fn try_from(doc: MlpDocument) -> Result<Self> {
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported model format_version {}",
                doc.format_version
            )));
        }
        if doc.activation != ACTIVATION_TAG {
            return Err(Error::Schema(format!("unsupported activation `{}`", doc.activation)));
        }
        Mlp::from_params(&doc.layer_sizes, doc.params)
    }
}

/// Activations recorded by a forward pass, used for reverse accumulation.
/// `activations[0]` is the input, the last entry is the output.
#[derive(Clone, Debug)]
pub struct Tape {
    pub activations: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("tape always holds the input")
    }
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config(
            "an MLP needs at least an input and an output layer".into(),
        ));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Config(format!(
            "layer sizes must be positive, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

impl Mlp {
    /// Xavier-normal weights, zero biases, drawn from the `init` sub-stream of `seed`.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        let mut mlp = Self::zeros(layer_sizes)?;
        mlp.xavier_init(&mut rng::substream(seed, "init"));
        Ok(mlp)
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        Self::from_params(layer_sizes, vec![0.0; param_count(layer_sizes)])
    }

    pub fn from_params(layer_sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        ensure_len("mlp parameter vector", param_count(layer_sizes), params.len())?;
        let mut offsets = Vec::with_capacity(layer_sizes.len() - 1);
        let mut offset = 0;
        for w in layer_sizes.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            params,
            offsets,
        })
    }

    /// Re-draws every weight from N(0, 2/(fan_in+fan_out)) and zeroes biases.
    pub fn xavier_init(&mut self, rng: &mut Rng) {
        for layer in 0..self.n_layers() {
            let (n_in, n_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
            let std = (2.0 / (n_in + n_out) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let start = self.offsets[layer];
            let (w, b) = self.params[start..start + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for value in w.iter_mut() {
                *value = normal.sample(rng);
            }
            b.fill(0.0);
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        ensure_len("mlp parameter vector", self.params.len(), params.len())?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Flat index range of the weights of `layer`.
    pub fn weight_range(&self, layer: usize) -> std::ops::Range<usize> {
        let start = self.offsets[layer];
        start..start + self.layer_sizes[layer] * self.layer_sizes[layer + 1]
    }

    /// Flat index range of the biases of `layer`.
    pub fn bias_range(&self, layer: usize) -> std::ops::Range<usize> {
        let end = self.weight_range(layer).end;
        end..end + self.layer_sizes[layer + 1]
    }

    pub fn to_layers(&self) -> Vec<Layer> {
        (0..self.n_layers())
            .map(|l| {
                let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
                Layer {
                    weights: DMatrix::from_row_slice(n_out, n_in, &self.params[self.weight_range(l)]),
                    bias: DVector::from_column_slice(&self.params[self.bias_range(l)]),
                }
            })
            .collect()
    }

    pub fn from_layers(layers: &[Layer]) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::Config("no layers given".into()))?;
        let mut sizes = vec![first.weights.ncols()];
        let mut params = Vec::new();
        for layer in layers {
            let (n_out, n_in) = layer.weights.shape();
            ensure_len("layer input width", *sizes.last().unwrap(), n_in)?;
            ensure_len("layer bias length", n_out, layer.bias.len())?;
            for r in 0..n_out {
                params.extend(layer.weights.row(r).iter());
            }
            params.extend(layer.bias.iter());
            sizes.push(n_out);
        }
        Self::from_params(&sizes, params)
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        ensure_len("mlp input", self.n_inputs(), input.len())
    }

    fn apply_layer(&self, layer: usize, input: &[f64], out: &mut Vec<f64>) {
        let n_in = self.layer_sizes[layer];
        let w = &self.params[self.weight_range(layer)];
        let b = &self.params[self.bias_range(layer)];
        let hidden = layer + 1 < self.n_layers();
        out.clear();
        for (row, bias) in w.chunks_exact(n_in).zip(b) {
            let z = dot(row, input) + bias;
            out.push(if hidden { sigmoid(z) } else { z });
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut current = input.to_vec();
        let mut next = Vec::new();
        for layer in 0..self.n_layers() {
            self.apply_layer(layer, &current, &mut next);
            std::mem::swap(&mut current, &mut next);
        }
        Ok(current)
    }

    pub fn forward_tape(&self, input: &[f64]) -> Result<Tape> {
        self.check_input(input)?;
        Ok(self.forward_tape_unchecked(input))
    }

    pub(crate) fn forward_tape_unchecked(&self, input: &[f64]) -> Tape {
        let mut activations = Vec::with_capacity(self.layer_sizes.len());
        activations.push(input.to_vec());
        for layer in 0..self.n_layers() {
            let mut out = Vec::with_capacity(self.layer_sizes[layer + 1]);
            self.apply_layer(layer, &activations[layer], &mut out);
            activations.push(out);
        }
        Tape { activations }
    }

    /// Reverse accumulation of `out_cot` (cotangent of the output) through a
    /// recorded pass. Parameter gradients are *added* into `grad_params`; the
    /// input cotangent is written into `grad_input` when requested.
    pub fn backward(&self, tape: &Tape, out_cot: &[f64], grad_params: &mut [f64], grad_input: Option<&mut [f64]>) {
        debug_assert_eq!(out_cot.len(), self.n_outputs());
        debug_assert_eq!(grad_params.len(), self.n_params());
        let mut delta = out_cot.to_vec();
        let mut prev = Vec::new();
        let want_input = grad_input.is_some();
        for layer in (0..self.n_layers()).rev() {
            let n_in = self.layer_sizes[layer];
            let a_prev = &tape.activations[layer];
            let w_range = self.weight_range(layer);
            let b_range = self.bias_range(layer);
            {
                let gw = &mut grad_params[w_range.clone()];
                for (g_row, &d) in gw.chunks_exact_mut(n_in).zip(&delta) {
                    if d != 0.0 {
                        for (g, &a) in g_row.iter_mut().zip(a_prev) {
                            *g += d * a;
                        }
                    }
                }
            }
            for (g, &d) in grad_params[b_range].iter_mut().zip(&delta) {
                *g += d;
            }
            if layer == 0 && !want_input {
                break;
            }
            prev.clear();
            prev.resize(n_in, 0.0);
            let w = &self.params[w_range];
            for (w_row, &d) in w.chunks_exact(n_in).zip(&delta) {
                if d != 0.0 {
                    for (p, &wv) in prev.iter_mut().zip(w_row) {
                        *p += d * wv;
                    }
                }
            }
            if layer > 0 {
                for (p, &a) in prev.iter_mut().zip(a_prev) {
                    *p *= a * (1.0 - a);
                }
                std::mem::swap(&mut delta, &mut prev);
            }
        }
        if let Some(gi) = grad_input {
            gi.copy_from_slice(&prev);
        }
    }

    /// Jacobian of the output w.r.t. the parameters as an `(l, n_out)` matrix:
    /// `H[(i, j)] = d output_j / d param_i`.
    pub fn param_jacobian(&self, input: &[f64]) -> Result<DMatrix<f64>> {
        let tape = self.forward_tape(input)?;
        Ok(self.param_jacobian_from_tape(&tape))
    }

    pub fn param_jacobian_from_tape(&self, tape: &Tape) -> DMatrix<f64> {
        let (l, n_out) = (self.n_params(), self.n_outputs());
        let mut h = DMatrix::<f64>::zeros(l, n_out);
        let mut cot = vec![0.0; n_out];
        for j in 0..n_out {
            cot[j] = 1.0;
            self.backward(tape, &cot, &mut h.as_mut_slice()[j * l..(j + 1) * l], None);
            cot[j] = 0.0;
        }
        h
    }

    /// Both Jacobians of one recorded pass, row-major:
    /// `jx` is `(n_out, n_in)` and `jp` is `(n_out, l)`.
    pub fn jacobians_from_tape(&self, tape: &Tape, jx: &mut Vec<f64>, jp: &mut Vec<f64>) {
        let (l, n_in, n_out) = (self.n_params(), self.n_inputs(), self.n_outputs());
        jx.clear();
        jx.resize(n_out * n_in, 0.0);
        jp.clear();
        jp.resize(n_out * l, 0.0);
        let mut cot = vec![0.0; n_out];
        for j in 0..n_out {
            cot[j] = 1.0;
            self.backward(
                tape,
                &cot,
                &mut jp[j * l..(j + 1) * l],
                Some(&mut jx[j * n_in..(j + 1) * n_in]),
            );
            cot[j] = 0.0;
        }
    }
}

/// Gradient of `L = (1/n) * sum_j e_j^2` w.r.t. the parameters, where
/// `e = target - prediction` and `h` is the `(l, n)` parameter Jacobian of the
/// prediction: `-(2/n) * H e`.
pub fn loss_gradient(h: &DMatrix<f64>, e: &[f64]) -> Result<Vec<f64>> {
    ensure_len("error vector vs jacobian columns", h.ncols(), e.len())?;
    let n = e.len() as f64;
    let ev = DVector::from_column_slice(e);
    let g = h * ev * (-2.0 / n);
    Ok(g.as_slice().to_vec())
}
