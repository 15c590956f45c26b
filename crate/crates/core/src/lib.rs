//! Ensemble simulator for dipole-coupled, inhomogeneously broadened
//! three-level ions driven by optical pulse sequences.
//!
//! The crate is organised bottom-up:
//!
//! * [`quantum`] holds the single-ion density matrix and its exact
//!   propagators (pulses, free evolution, optical-pump reset).
//! * [`ensemble`] samples control–target pair parameters.
//! * [`protocols`] compiles two-channel pulse timelines and runs them on
//!   coupled pairs, including Rabi distillation and pair selection.
//! * [`detection`] sums the target coherences into an echo trace and
//!   extracts echo magnitude and phase.
//!
//! Units: frequencies in Hz (cycles per second), times in seconds, phases
//! in radians. Factors of 2π only appear inside propagators.

pub mod detection;
pub mod ensemble;
mod error;
pub mod protocols;
pub mod quantum;

pub use error::{Error, Result};

pub use num_complex::Complex64 as C64;
