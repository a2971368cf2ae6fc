//! Feed-forward network kernel: dense layers with ReLU hidden activations,
//! hand-written backprop, Adam, the Gaussian negative log likelihood and
//! target-network blending.

mod adam;
pub mod loss;
mod matrix;
mod member;
mod mlp;

pub use adam::{Adam, AdamConfig};
pub use matrix::Matrix;
pub use member::Member;
pub use mlp::{
    backward_and_step, soft_update, Gradients, Head, Mlp, MlpSpec, Tape, LOG_VARIANCE_MAX, LOG_VARIANCE_MIN,
    VARIANCE_MAX, VARIANCE_MIN,
};
