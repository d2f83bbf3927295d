//! Quantum-trajectory simulation of a resonantly driven, damped Jaynes-Cummings
//! system: a two-level atom coupled to a single leaky cavity mode.
//!
//! The crate unravels the photodetection master equation into stochastic
//! pure-state trajectories, reconstructs ensemble density matrices, and
//! computes purities, field fidelity, Bloch motion, trajectory entanglement,
//! photon counts and entanglement leaps. A dense Runge-Kutta integrator of the
//! master equation is kept alongside as an independent reference.
//!
//! Units: `hbar = 1`, and rates are expressed in units of the atom-field
//! coupling `g` (normally `g = 1`), times in `1/g`.

pub mod cli;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod hilbert;
pub mod observables;

mod exec;

pub use dynamics::{SimParams, SimParamsBuilder, TrajectoryRecord};
pub use ensemble::{EnsembleResult, Execution};
pub use error::{Result, SimError};
pub use hilbert::{Atom, DensityMatrix, JointState, Operator, SpaceDescriptor, Subsystem};

/// Complex scalar used throughout the crate.
pub type C64 = num_complex::Complex64;
