//! Stochastic particle trajectories guided by a lattice Fock-space state:
//! deterministic Bohmian flow within a particle-number sector, interrupted by
//! random creation and annihilation jumps whose rates are set by the
//! interaction Hamiltonian.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod flow;
pub mod fockgrid;
pub mod jumps;
pub mod model;
pub mod process;
pub mod propagator;
pub mod sparse;

pub use error::{Error, Result};
pub use num_complex::Complex64;
