//! Minimal differentiable-layer core: tensors, 3D convolution, dense layers,
//! normalization, losses, momentum SGD and finite-difference verification.

mod conv;
pub mod gradcheck;
mod graph;
pub mod loss;
pub mod optim;
mod params;
mod tensor;

pub use conv::ConvGeometry;
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use graph::{conv_forward, dense_forward, l2_normalize, softmax, Graph, NodeId};
pub use loss::{LossSample, PoseLossWeights};
pub use optim::{sgd_step, Sgd};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::{Scalar, Tensor};
