//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::{softmax, Real, Tensor};
