//! Small reverse-mode automatic differentiation library over dense `f64`
//! tensors, with the spatial ops needed for polar bird's-eye-view networks.

pub mod check;
pub mod checkpoint;
mod error;
pub mod graph;
pub mod optim;
mod params;
mod tensor;

pub use check::{grad_check, grad_check_params, grad_check_with, GradCheckOptions, GradCheckReport};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use error::AutodiffError;
pub use graph::{CustomOp, Gradients, Graph, Var};
pub use optim::{Adam, Optimizer, Sgd};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
