//! Minimal tensor autodiff for small sequence models on the CPU.
//!
//! Tensors are dense row-major arrays; sequences are laid out as
//! `[batch, time, channels]`. The graph is rebuilt for every forward pass
//! and differentiated with [`Graph::backward`].

mod graph;
pub mod layers;
mod optim;
mod params;
mod real;
mod tensor;

pub use graph::{softmax, Grads, Graph, Mode, Var};
pub use optim::{clip_grad_norm, Adam};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use real::{flush_denormals, matmul, Real};
pub use tensor::Tensor;
