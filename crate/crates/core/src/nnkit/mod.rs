//! Small dense-network toolkit: tensors, a reverse-mode tape, fully
//! connected layers and the Adam optimizer.

mod adam;
mod dense;
mod tape;
mod tensor;

pub use adam::{AdamHyper, AdamState};
pub use dense::{Activation, DenseLayer, DenseNet, NetVars};
pub use tape::{bce_cell, Gradients, Tape, Var, LLR_CLAMP};
pub use tensor::Tensor;
