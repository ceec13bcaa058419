//! Reverse-mode automatic differentiation and the layers built on it.

pub mod checkpoint;
mod graph;
mod layers;
mod optim;
mod params;
mod tensor;

pub use graph::{same_padding, Gradients, Graph, Var};
pub use layers::{glorot_uniform, lstm_cell, rows_of, Conv2d, Dense, LstmCell};
pub use optim::Adam;
pub use params::{clip_global_norm, Bound, ParamId, ParamSet};
pub use tensor::Tensor;

pub(crate) use graph::softmax_in_place;
