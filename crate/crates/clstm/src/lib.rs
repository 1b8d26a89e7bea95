//! Coupled-LSTM sentence-pair matching: 2D grid recurrences over the
//! cross-product of two sentences, dynamic max pooling, and analytically
//! derived gradients, plus NBOW and parallel-LSTM baselines.

pub mod cells;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod model;
pub mod pooling;
pub mod registry;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{Arch, CellKind, DirectionMode, Head, Model, ModelConfig};
pub use tensor::Tensor;
