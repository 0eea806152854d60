//! Minimal reverse-mode differentiation over dense tensors.
//!
//! The op set is exactly what the extractor, matcher, regressor and loss need.
//! Shapes must match exactly; there is no broadcasting.

pub mod checkpoint;
mod kernels;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use optim::{adam_step, step_lr, AdamConfig, AdamState};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};
