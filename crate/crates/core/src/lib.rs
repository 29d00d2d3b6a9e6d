//! Clifford-algebra convolutional networks for learning Maxwell dynamics,
//! together with the FDTD solver that generates their training data.

pub mod algebra;
pub mod dataset;
pub mod error;
pub mod fdtd;
pub mod harness;
pub mod models;
pub mod mvtensor;
pub mod selftest;

pub use algebra::{Algebra, AlgebraKind, Blade, CayleyTable, Multivector, Signature};
pub use error::{Error, Result};
