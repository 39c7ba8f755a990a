//! Online maintenance of neural-network models under slow parametric drift
//! with a Subset Extended Kalman Filter.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod harness;
pub mod maintenance;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod node;
pub mod rng;
pub mod sekf;
pub mod selection;
pub mod simulators;
pub mod training;

pub use error::{Error, Result};
pub use model::{Model, ParamModel, Sample};
pub use nn::Mlp;
pub use node::NodeModel;
pub use sekf::{SekfState, StepOutcome};
pub use selection::SelectionPolicy;
