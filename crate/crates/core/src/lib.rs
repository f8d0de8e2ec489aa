//! Quantum Darwinism measurement model for Wigner's Friend scenarios.
//!
//! A Friend's measurement is modelled as equilibration of a lab (pointer
//! qubit, Friend qubits, environment qubits) under a GUE-sampled broadcasting
//! Hamiltonian. The equilibrated state is the pinched initial state, from
//! which the crate derives non-objectivity overlaps, Helstrom readout errors
//! and observer disagreements, for both the simple and the extended
//! (two-lab) scenario.

pub mod cli;
pub mod discrimination;
pub mod error;
pub mod ewfs;
pub mod gue;
pub mod harness;
pub mod qcore;
pub mod wf;

pub use error::{Error, Result};
