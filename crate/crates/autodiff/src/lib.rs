//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! A [`Graph`] is built once from named inputs, named parameters and
//! primitive operations, then evaluated with [`Graph::forward`] against a set
//! of [`Bindings`]. [`Graph::backward`] returns the gradient of every
//! parameter that reaches the chosen output. [`finite_difference_check`]
//! verifies those gradients against central differences.
//!
//! ```
//! use wcaps_autodiff::{Bindings, Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param("x");
//! let y = g.param("y");
//! let z = g.mul(x, y);
//! let (xv, yv) = (Tensor::scalar(2.0), Tensor::scalar(3.0));
//! g.forward(&Bindings::new().with("x", &xv).with("y", &yv)).unwrap();
//! let grads = g.backward(z, &Tensor::scalar(1.0)).unwrap();
//! assert_eq!(grads["x"].item(), Some(3.0));
//! ```

mod check;
mod graph;
mod tensor;

pub use check::{
    finite_difference_check, relative_error, CheckReport, ParamCheck, FD_STEP, REL_ERROR_FLOOR,
};
pub use graph::{squash_slice, Bindings, CustomOp, Gradients, Graph, NodeId};
pub use tensor::{dot, sigmoid, softmax, Tensor};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("tensor data has {len} entries but shape {shape:?} needs their product")]
    Length { shape: Vec<usize>, len: usize },
    #[error("tensor contains NaN or infinity")]
    NonFinite,
    #[error("{0} produced a non-finite value")]
    NonFiniteOutput(&'static str),
    #[error("input `{0}` is not bound")]
    Unbound(String),
    #[error("backward called before forward")]
    NotEvaluated,
    #[error("output must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
}
