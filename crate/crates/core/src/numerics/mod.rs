//! Dense `f64` tensors and a reverse-mode computation graph.

mod gradcheck;
mod graph;
pub mod kernels;
mod params;
mod tensor;

pub use gradcheck::{
    check_gradients, check_gradients_with_floor, GradCheckReport, DEFAULT_FLOOR, DEFAULT_STEP,
};
pub use graph::{Gradients, Graph, Var};
pub use kernels::{Elementwise, Reduction};
pub use params::{Bound, ParamId, ParamSet};
pub use tensor::{broadcast_shape, broadcast_zip, Tensor};

/// Elementwise product with singleton-axis broadcasting.
pub fn broadcast_mul(a: &Tensor, b: &Tensor) -> crate::Result<Tensor> {
    broadcast_zip(a, b, |x, y| x * y)
}
