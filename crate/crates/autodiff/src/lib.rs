//! Minimal reverse-mode automatic differentiation over dense row-major arrays.
//!
//! A [`Graph`] is built up front from leaves (inputs, trainable parameters,
//! frozen weights, constants) and operation nodes, evaluated against a set
//! of input bindings, and then differentiated from a scalar loss node with
//! [`Graph::backward`]. The op set is deliberately small: affine maps, 2-D
//! convolution and transposed convolution, sine, ReLU, reshape, concat,
//! softmax, the two standard losses, axis means and softmax entropy.

mod adam;
mod array;
mod error;
mod fastmath;
mod gradcheck;
mod graph;
mod kernels;
mod scalar;

pub use adam::{AdamConfig, AdamState};
pub use array::DenseArray;
pub use error::GraphError;
pub use gradcheck::{check_gradients, op_suite, GradCheckOptions, OpCase};
pub use graph::{BackwardOptions, Gradients, Graph, LeafKind, NodeId};
pub use scalar::{Precision, Scalar};

pub type Result<T, E = GraphError> = std::result::Result<T, E>;
