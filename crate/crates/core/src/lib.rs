//! Simulation and optimization toolkit for pulsed-Raman sideband cooling of
//! one- and two-ion crystals with a quench-assisted repumping scheme.
//!
//! The crate is organized around the cooling workflow:
//!
//! - [`fock`]: Laguerre polynomials, motional-state-dependent Rabi
//!   frequencies, thermal distributions.
//! - [`bloch`]: optical Bloch dynamics of one sideband pulse, repump
//!   projection, readout observables.
//! - [`sequencer`]: construction of the pulse schedules (two-order,
//!   two-mode interleaved, multi-order).
//! - [`analysis`]: cooling-constant fits, sideband-ratio thermometry, the
//!   per-level best-order map, frequency-scan emulation.
//! - [`sweep`]: parameter-grid campaigns with joint fits and optimum search.
//! - [`config`] / [`cli`]: the flat key-value run configuration and the
//!   `sbc-forge` command-line front end.

pub mod analysis;
pub mod bloch;
pub mod cli;
pub mod config;
pub mod fock;
pub mod ode;
pub mod sequencer;
pub mod sweep;

pub use analysis::{CoolingFit, CoolingTrace};
pub use bloch::{MotionalState, PhysicsParams};
pub use fock::{RabiTable, ThermalSpec, TrapMode};
pub use sequencer::PulseSchedule;
pub use sweep::{Scenario, SweepPlan, SweepResult};
