//! Resilience-based robust mean estimation and low-rank recovery.

pub mod corefinder;
pub mod error;
pub mod generators;
pub mod io;
pub mod linalg;
pub mod lowrank;
pub mod norms;
pub mod quadratic;
pub mod meanest;
pub mod resilience;

pub use error::{Error, Result};
