//! Simulation of a pulsed, waveguide-coupled quantum-dot single-photon source.
//!
//! Times are in ns and rates in ns⁻¹ unless a name says otherwise.

pub mod bloch;
pub mod budget;
pub mod device;
mod error;
pub mod montecarlo;
pub mod ode;
pub mod photonstats;

pub use error::{Error, Result};
