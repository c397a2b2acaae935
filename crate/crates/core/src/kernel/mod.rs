//! Forward and backward numerical layers.
//!
//! Every forward op has a companion that returns the exact adjoint with
//! respect to its input (and, for parameterized layers, its weights). The
//! ops are pure functions over [`Tensor`](crate::tensor::Tensor) values.

mod conv;
mod elementwise;
mod linear;
mod loss;
mod norm;
mod upsample;

pub use conv::{conv2d, conv2d_input_grad, conv2d_weight_grad, conv_out_extent};
pub use elementwise::{avg_pool2, avg_pool2_backward, relu, relu_backward};
pub use linear::{linear, linear_backward, LinearGrads};
pub use loss::softmax_cross_entropy;
pub use norm::{instance_norm, instance_norm_backward, INSTANCE_NORM_EPS};
pub use upsample::{bilinear_upsample, bilinear_upsample_backward};
