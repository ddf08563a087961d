//! Minimal dense numerical substrate: tensors, a parameter store, an
//! eager autodiff graph, Adam with warmup/decay, and a
//! finite-difference gradient checker.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod params;
pub mod tensor;

pub use adam::{adam_step, lr_at, LrSchedule, OptState};
pub use gradcheck::grad_check;
pub use graph::{apply_gradients, Graph, Var};
pub use ops::{layer_norm, linear, softmax_rows};
pub use params::{ParamEntry, ParamStore};
pub use tensor::Tensor;
