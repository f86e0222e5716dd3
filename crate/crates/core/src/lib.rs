//! Hamiltonian field theory on k-cosymplectic phase spaces in Darboux
//! coordinates.
//!
//! The crate builds solution k-vector fields of the geometric Hamiltonian
//! equations, checks Noether-type symmetries and assembles their conserved
//! currents, and integrates the Hamilton-de Donder-Weyl equations of
//! quadratic Hamiltonians on rectangular grids.  The linear wave equation in
//! one to three spatial dimensions is the worked flagship system.
//!
//! Everything is immutable after construction and evaluation is pure, so all
//! types can be shared freely across threads.

pub mod chart;
pub mod cli;
mod error;
pub mod fd;
pub mod fields;
pub mod hamiltonian;
pub mod symmetry;

pub use error::{Error, Result};
