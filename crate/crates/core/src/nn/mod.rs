//! Feed-forward networks, exact parameter Jacobians, and the gradient
//! optimizer used by the offline baselines.

mod adam;
mod mlp;
mod scheduler;

pub use adam::AdamState;
#[allow(unused_imports)]
pub(crate) use mlp::{dot, sigmoid};
pub use mlp::{loss_gradient, param_count, Layer, Mlp, MlpDocument, Tape, ACTIVATION_TAG, MODEL_FORMAT_VERSION};
pub use scheduler::PlateauScheduler;
