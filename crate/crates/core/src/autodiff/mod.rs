//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] is rebuilt for every forward pass. Parameters are copied in
//! with [`Tape::param`], inputs with [`Tape::constant`]; after
//! [`Tape::backward`] the gradients of the parameter leaves are read back
//! and handed to [`adam_step`].

mod adam;
pub mod checkpoint;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use params::{clip_global_norm, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
