//! Dense tensors, reverse-mode differentiation, Adam, and gradient checking.

mod adam;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{gradient_check, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{Axis, Gradients, Graph, NodeId, Padding};
pub use params::{ParamId, ParamSet, Parameter};
pub use tensor::{PrecisionMode, Scalar, Tensor};
