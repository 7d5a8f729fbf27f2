//! Phase-field cell problems and homogenisation estimates for
//! Ambrosio–Tortorelli type energies.

pub mod cell_problems;
pub mod discretization;
pub mod energy;
pub mod error;
pub mod fidelity;
pub mod homogenization;
pub mod integrands;
pub mod solvers;

pub use error::{Error, Result};
