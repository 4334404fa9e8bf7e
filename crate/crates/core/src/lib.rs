//! Defect-formation free energy of a one-dimensional nearest-neighbour chain.
//!
//! Three routes to the same quantity are provided: Monte Carlo sampling of the
//! finite chain ([`sampler`]), the Cauchy–Born coarse-grained approximation and the
//! thermodynamic limit ([`coarse_grain`]), and exact references ([`oracles`]).

pub mod cauchy_born;
pub mod cli;
pub mod coarse_grain;
pub mod error;
pub mod oracles;
pub mod potentials;
pub mod quadrature;
pub mod sampler;

pub use error::{Error, Result};
