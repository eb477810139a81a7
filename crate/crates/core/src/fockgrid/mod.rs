//! Configuration space of a variable number of identical bosons on a
//! periodic lattice, and the grid representation of Fock-space vectors as
//! functions on it.

mod density;
mod grid;
mod ladder;
mod pv;
mod vector;

pub use density::{
    density, is_node, node_floor, sample_configuration, ConfigurationSampler, DensityGrid, GuidingState, NORM_TOLERANCE,
};
pub use grid::{Atom, Configuration, GridSpec, Sector};
pub use ladder::{annihilation, atom_basis, count_operator, creation, number_operator};
pub use pv::{pv_expectation, pv_project, verify_pv_consistency, CheckOutcome, ConfigRegion, PvReport};
pub use vector::{permutations, FockSpace, FockVector};
