//! Minimal differentiable compute kernel: tensors, a tape autodiff with
//! exact analytic backward passes, transformer building blocks, Adam, a
//! finite-difference gradient checker, and checkpoint I/O.

pub mod adam;
pub mod blocks;
pub mod checkpoint;
pub mod grad_check;
pub mod ops;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, clip_grad_norm, AdamState};
pub use grad_check::grad_check;
pub use ops::{layer_norm, linear, softmax_cross_entropy, LN_EPS};
pub use params::{ParamInit, ParamStore};
pub use tape::{Id, Tape};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("data length {len} does not match shape {shape:?}")]
    ShapeData { shape: Vec<usize>, len: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("attention over empty context")]
    EmptyContext,
    #[error("class index {index} out of range for {classes} classes")]
    IndexError { index: usize, classes: usize },
    #[error("duplicate parameter {0}")]
    DuplicateParam(String),
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGrad(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
