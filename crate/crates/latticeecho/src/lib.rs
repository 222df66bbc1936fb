//! Tight-binding lattice simulator for staggered-potential time-mirror
//! (Loschmidt echo) protocols on 1D chains and 2D square lattices.
//!
//! A wavepacket evolves freely under a hopping Hamiltonian; a short staggered
//! on-site pulse swaps the populations of the two folded bands, reversing all
//! group velocities, and the packet runs back into its initial shape. The
//! crate provides the band-structure algebra, two exact propagators (a fast
//! supercell k-space one and a dense real-space oracle), echo metrics and
//! predictions, and a CLI driver.

pub mod analysis;
pub mod bands;
pub mod check;
pub mod config;
pub mod error;
pub mod evolve;
pub mod lattice;
pub mod output;

pub use error::{EchoError, Result};
