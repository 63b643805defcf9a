//! Evenly symmetric two-point blow-up solutions of the mean field equation
//! `Δu + ρ(e^u/∫e^u − 1) = 0` on unit-area flat tori.

pub mod ansatz;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod greens;
pub mod krylov;
pub mod solver;

pub use error::{MfeError, Result};
