//! Small differentiable-computation core: dense and 1-D convolution layers,
//! ReLU, softmax cross-entropy, backpropagation, SGD and gradient checking.
//!
//! Everything is `f64` and accumulates in a fixed row-major order, so equal
//! inputs give bit-identical losses and gradients.

mod gradcheck;
mod layers;
mod matrix;
mod network;

pub use gradcheck::{finite_difference_check, max_relative_error, DEFAULT_EPS};
pub use layers::{conv1d_forward, dense_forward, relu, softmax_cross_entropy, ConvMeta, LayerKind, LayerParams, SoftmaxCe};
pub use matrix::Matrix;
pub(crate) use matrix::{dot, squared_distance};
pub use network::{
    backprop, backprop_weighted, sgd_step, Activation, BackpropOutput, Batch, Gradients, Layer, Network, Trace,
};
