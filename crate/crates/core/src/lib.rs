#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod index;
pub mod lattice;
pub mod negdep;
pub mod rate_eq;
pub mod rng;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
