//! Parametrix construction of transition densities and Feller semigroups for
//! SDEs driven by independent one-dimensional symmetric Lévy processes.

pub mod density;
pub mod error;
pub mod field;
pub mod frozen;
pub mod lattice;
pub mod levy;
pub mod montecarlo;
pub mod parametrix;
pub mod quad;
pub mod semigroup;
pub mod truncation;

pub use error::{Error, Result};
