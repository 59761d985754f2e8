//! Particle simulation and certification of differential inclusions in
//! Wasserstein spaces.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dynamics;
pub mod error;
pub mod estimates;
pub mod inclusion;
pub mod measures;
pub mod ocp;
pub mod scenario;
pub mod transport;
mod vecops;

pub use error::{Error, Result};
pub use measures::ParticleMeasure;
