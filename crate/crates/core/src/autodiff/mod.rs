//! Reverse-mode automatic differentiation over dense `f64` tensors, plus the
//! SGD update rule (weight decay, global-norm gradient clipping) used by
//! every training protocol in the lab.

pub mod fd;
pub mod graph;
pub mod optim;
pub mod tensor;

pub use fd::finite_diff_grad;
pub use graph::{cross_entropy_loss, Graph, NodeId};
pub use optim::{sgd_step, GradientMap, OptimStep, ParameterVector};
pub use tensor::Tensor;
