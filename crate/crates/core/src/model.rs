//! The uniform interface the maintenance policies need from a predictor:
//! a flat parameter vector, prediction, parameter Jacobian, and
//! vector-Jacobian products.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::node::NodeModel;
use crate::rng::Rng;

pub trait ParamModel {
    fn n_params(&self) -> usize;
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn predict(&self, input: &[f64]) -> Result<Vec<f64>>;
    /// Prediction and the `(l, n_out)` Jacobian w.r.t. the parameters.
    fn jacobian(&self, input: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)>;
    /// Prediction; adds `sum_j cot_j * d y_j / d params` into `grad`.
    fn vjp(&self, input: &[f64], cot: &[f64], grad: &mut [f64]) -> Result<Vec<f64>>;
    /// Prediction; `cot(output, cot_out)` picks the cotangent from the
    /// prediction, whose vector-Jacobian product is added into `grad`.
    fn backprop(&self, input: &[f64], cot: &mut dyn FnMut(&[f64], &mut [f64]), grad: &mut [f64]) -> Result<Vec<f64>>;
    /// Xavier re-initialization.
    fn reinitialize(&mut self, rng: &mut Rng);
}

impl ParamModel for Mlp {
    fn n_params(&self) -> usize {
        Mlp::n_params(self)
    }
    fn n_inputs(&self) -> usize {
        Mlp::n_inputs(self)
    }
    fn n_outputs(&self) -> usize {
        Mlp::n_outputs(self)
    }
    fn params(&self) -> &[f64] {
        Mlp::params(self)
    }
    fn params_mut(&mut self) -> &mut [f64] {
        Mlp::params_mut(self)
    }
    fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward(input)
    }
    fn jacobian(&self, input: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let tape = self.forward_tape(input)?;
        let h = self.param_jacobian_from_tape(&tape);
        Ok((tape.output().to_vec(), h))
    }
    fn vjp(&self, input: &[f64], cot: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        crate::error::ensure_len("mlp output cotangent", Mlp::n_outputs(self), cot.len())?;
        crate::error::ensure_len("mlp gradient buffer", Mlp::n_params(self), grad.len())?;
        let tape = self.forward_tape(input)?;
        self.backward(&tape, cot, grad, None);
        Ok(tape.output().to_vec())
    }
    fn backprop(&self, input: &[f64], cot: &mut dyn FnMut(&[f64], &mut [f64]), grad: &mut [f64]) -> Result<Vec<f64>> {
        crate::error::ensure_len("mlp gradient buffer", Mlp::n_params(self), grad.len())?;
        let tape = self.forward_tape(input)?;
        let mut c = vec![0.0; Mlp::n_outputs(self)];
        cot(tape.output(), &mut c);
        self.backward(&tape, &c, grad, None);
        Ok(tape.output().to_vec())
    }
    fn reinitialize(&mut self, rng: &mut Rng) {
        self.xavier_init(rng);
    }
}

impl ParamModel for NodeModel {
    fn n_params(&self) -> usize {
        self.field().n_params()
    }
    fn n_inputs(&self) -> usize {
        NodeModel::n_inputs(self)
    }
    fn n_outputs(&self) -> usize {
        NodeModel::n_outputs(self)
    }
    fn params(&self) -> &[f64] {
        self.field().params()
    }
    fn params_mut(&mut self) -> &mut [f64] {
        self.field_mut().params_mut()
    }
    fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        NodeModel::predict(self, input)
    }
    fn jacobian(&self, input: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        NodeModel::jacobian(self, input)
    }
    fn vjp(&self, input: &[f64], cot: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        NodeModel::vjp(self, input, cot, grad)
    }
    fn backprop(&self, input: &[f64], cot: &mut dyn FnMut(&[f64], &mut [f64]), grad: &mut [f64]) -> Result<Vec<f64>> {
        NodeModel::backprop(self, input, cot, grad)
    }
    fn reinitialize(&mut self, rng: &mut Rng) {
        self.field_mut().xavier_init(rng);
    }
}

/// Either model kind, as stored in model files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Mlp(Mlp),
    Node(NodeModel),
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            Model::Mlp($m) => $e,
            Model::Node($m) => $e,
        }
    };
}

impl ParamModel for Model {
    fn n_params(&self) -> usize {
        delegate!(self, m => ParamModel::n_params(m))
    }
    fn n_inputs(&self) -> usize {
        delegate!(self, m => ParamModel::n_inputs(m))
    }
    fn n_outputs(&self) -> usize {
        delegate!(self, m => ParamModel::n_outputs(m))
    }
    fn params(&self) -> &[f64] {
        delegate!(self, m => ParamModel::params(m))
    }
    fn params_mut(&mut self) -> &mut [f64] {
        delegate!(self, m => ParamModel::params_mut(m))
    }
    fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        delegate!(self, m => ParamModel::predict(m, input))
    }
    fn jacobian(&self, input: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        delegate!(self, m => ParamModel::jacobian(m, input))
    }
    fn vjp(&self, input: &[f64], cot: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        delegate!(self, m => ParamModel::vjp(m, input, cot, grad))
    }
    fn backprop(&self, input: &[f64], cot: &mut dyn FnMut(&[f64], &mut [f64]), grad: &mut [f64]) -> Result<Vec<f64>> {
        delegate!(self, m => ParamModel::backprop(m, input, cot, grad))
    }
    fn reinitialize(&mut self, rng: &mut Rng) {
        delegate!(self, m => ParamModel::reinitialize(m, rng))
    }
}

impl Model {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Model = serde_json::from_str(&text)?;
        if let Model::Node(node) = &model {
            // re-run the structural checks skipped by the derived decoder
            NodeModel::from_field(
                node.field().clone(),
                node.n_states(),
                node.n_exogenous(),
                node.dt(),
                node.horizon(),
                node.extra_input(),
            )?;
        }
        Ok(model)
    }
}


/// One supervised pair: packed model input and measured target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}
