//! Reverse-mode automatic differentiation on dense `f64` tensors.
//!
//! The engine is deliberately small: a [`Tape`] records values and backward
//! closures, ops are methods on the tape, and model code keeps its parameters
//! as plain [`Tensor`]s that it registers as leaves for each forward pass.
//! Kernels that do multiply-accumulate work report it to the tape so model
//! complexity can be measured by running a forward pass.

pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use ops::{conv_out_len, gru_step_macs, sigmoid, BatchNormOut, Conv2dCfg};
pub use optim::Adam;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
