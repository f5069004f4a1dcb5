//! Dissipative ground- and excited-state preparation for small fermionic systems.

pub mod dynamics;
pub mod error;
pub mod filter;
pub mod fock;
pub mod hamiltonian;
pub mod integrals;
pub mod jumps;
pub mod linalg;
pub mod observables;
pub mod run;
pub mod spectral;

pub use error::{Error, Result};
