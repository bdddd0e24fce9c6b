//! Minimal CPU neural-network toolkit: dense tensors, layers with explicit
//! forward/backward passes, losses, optimizers and a finite-difference
//! gradient checker.
//!
//! Every layer is generic over [`Real`] so models train in `f32` and can be
//! instantiated in `f64` for gradient checks.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod param;
pub mod real;
pub mod tensor;

pub use param::{Param, ParamKind, Parameterized};
pub use real::{gemm, MatRef, Real};
pub use tensor::{argmax, softmax, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unknown {kind} '{name}' (known: {known})")]
    UnknownName { kind: &'static str, name: String, known: String },
}

/// A differentiable operation with cached state for one backward pass.
pub trait Layer<R: Real> {
    fn forward(&mut self, x: &Tensor<R>, train: bool) -> Result<Tensor<R>, NnError>;
    /// Gradient w.r.t. the last forward input; accumulates parameter grads.
    fn backward(&mut self, dy: &Tensor<R>) -> Tensor<R>;
}
