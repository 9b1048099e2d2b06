//! Speech classification workbench: a small autodiff engine, handcrafted
//! acoustic features, recurrent and attention-pooled classifiers, a toy
//! self-supervised speech encoder, soft-weighted cross-entropy, and the
//! training loops that tie them together.

pub mod autodiff;
pub mod data;
pub mod features;
pub mod losses;
pub mod models;
pub mod training;
mod error;

pub use error::{Error, Result};
