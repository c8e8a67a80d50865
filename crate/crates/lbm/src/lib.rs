//! D2Q9 lattice Boltzmann solver producing velocity-magnitude snapshot
//! sequences of 2-D flow past a circular cylinder.
//!
//! Boundaries: Zou–He velocity inlet on the left, zero-gradient outflow on the
//! right, periodic top/bottom, half-way bounce-back on solid cells.

pub mod error;
pub mod lattice;
pub mod sim;
pub mod spectrum;
pub mod validation;

pub use error::{LbmError, Result};
pub use lattice::{equilibrium, LatticeState, XBoundary};
pub use sim::{run, SimulationConfig};
pub use spectrum::{probe_dominant_frequency, probe_signal, Spectrum};
