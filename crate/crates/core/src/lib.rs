//! Model-based policy optimization driven by discrete-time costates.
//!
//! The crate contains the numeric building blocks (dense matrices, a small
//! MLP with hand-written backpropagation), benchmark environments, a learned
//! dynamics model, the costate/Hamiltonian machinery, the trainer built on it,
//! a value-expansion baseline and a Riccati reference solver.

pub mod dataset;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod hac;
pub mod mlp;
pub mod mve;
pub mod optim;
pub mod pmp;
pub mod policy;
pub mod riccati;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
