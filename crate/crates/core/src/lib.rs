//! Rate-equation simulation and parameter fitting for quantum-dot
//! photonic-crystal lasers.
//!
//! The crate is organised bottom-up: [`model`] holds the physics, [`pump`]
//! the excitation waveforms, [`integrator`] the time stepping, and
//! [`steady_state`], [`experiments`] and [`fitting`] the analyses built on
//! top. [`cli_io`] is the only module that touches the filesystem.

pub mod cli_io;
pub mod experiments;
pub mod fitting;
pub mod integrator;
pub mod model;
pub mod pump;
pub mod steady_state;

pub use integrator::{integrate, IntegrationConfig, Trajectory};
pub use model::{LaserState, SimParams};
pub use pump::PumpWaveform;
