//! Open-system dynamics of hard-core bosons and spinless fermions on a 1D
//! lattice under particle loss and dephasing.
//!
//! * [`model`] describes the lattice, Hamiltonian, dissipation and initial state.
//! * [`mps`] is a number-conserving MPS with TEBD time evolution.
//! * [`jump`] applies loss and dephasing jumps, including the fermionic string.
//! * [`trajectory`] unravels the master equation into quantum trajectories.
//! * [`ed`] is the dense exact-diagonalization oracle.
//! * [`experiments`] drives the deterministic and stochastic loss protocols.
//! * [`cli`] holds configuration parsing and output writing for the binary.

pub mod cli;
pub mod error;
pub mod model;
pub mod jump;
pub mod mps;
pub mod ed;
pub mod experiments;
pub mod trajectory;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;
