//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records one forward pass. Parameters live in a [`ParamStore`]
//! outside the tape and are copied onto it with [`Tape::param`]; after
//! [`Tape::backward`] their gradients are added into the store with
//! [`ParamStore::accumulate`], and [`Adam`] consumes them.

mod adam;
mod gradcheck;
pub mod kernels;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, GradCheck};
pub use params::{Group, ParamId, ParamSelector, ParamStore, Parameter, ParameterPartition};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
