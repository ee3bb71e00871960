//! Minimal neural-network kernel.
//!
//! Every layer is a pair of free functions: a forward pass and a hand-written
//! backward pass that recomputes whatever it needs from the forward inputs.
//! There is no autodiff graph; callers thread activations through explicitly.

mod activation;
pub mod checkpoint;
mod conv;
pub mod gradcheck;
pub(crate) mod linalg;
mod loss;
mod lrn;
mod norm;
mod params;
mod pool;
mod roi_pool;
mod sgd;

pub use activation::{relu, relu_backward};
pub use conv::{conv2d, conv2d_backward, conv2d_batch, conv2d_batch_backward, conv_output_extent};
pub use loss::{contrastive_loss, weighted_softmax_loss, ContrastiveGrad};
pub use lrn::{lrn, lrn_backward, LrnParams};
pub use norm::{l2_normalize, l2_normalize_backward, l2_normalize_slice, l2_normalize_slice_backward};
pub use params::{LayerParams, ParamGrads};
pub use pool::{max_pool2d, max_pool2d_backward};
pub use roi_pool::{roi_pool, roi_pool_backward, RoiPoolOutput};
pub use sgd::{sgd_step, SgdState};
