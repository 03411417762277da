//! Numerical core for exact diffusion and related decentralized methods.
//!
//! Everything here is `no_std` with `alloc`: graphs and combination matrices,
//! dense eigensolvers, per-agent cost models, the iteration engines and the
//! error-dynamics analysis. File formats and the command line live in the
//! `exdiff` crate.
#![no_std]

extern crate alloc;

mod error;

pub mod cost;
pub mod engine;
pub mod graph;
pub mod linalg;
pub mod spectral;
pub mod stability;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64;
