//! Numerical verification of local rigidity for conformal actions of the
//! Baumslag–Solitar groups `<a, b_1..b_n | a b_i a^-1 = b_i^k, [b_i, b_j] = 1>`
//! on the sphere `S^n`.

pub mod config;
pub mod defcomplex;
pub mod error;
pub mod fd;
pub mod jets;
pub mod linalg;
pub mod mobius;
pub mod pipeline;
pub mod rng;
pub mod suites;
pub mod symtensor;

pub use error::{Error, Result};
