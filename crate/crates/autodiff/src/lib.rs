//! Dense `f64` tensors with reverse-mode differentiation.
//!
//! Graphs are built from a fixed op set (matmul, elementwise arithmetic,
//! leaky ReLU, tanh, log-softmax, reductions, argmax/index picks, 2-D
//! convolution). Backward passes are emitted into the same graph, which
//! makes Hessian-vector products a second ordinary gradient.

mod backward;
mod diff;
mod error;
mod graph;
mod kernels;
mod oracle;
mod param;
mod tensor;

pub use diff::{function_hvp, grad, hvp, per_example_grads, GradProgram, GradResult, HvpProgram};
pub use error::{AdError, Result};
pub use graph::{Graph, Node, NodeId, Op, Selector};
pub use oracle::{finite_diff_grad, finite_diff_hvp};
pub use param::{max_relative_error, Layout, ParamVector, Segment};
pub use tensor::{read_tnsr, write_tnsr, Tensor};
