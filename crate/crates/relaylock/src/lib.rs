//! Simulation and analysis toolkit for mixed-signal relay-feedback resonant
//! oscillators: a second-order resonator in closed loop with a sampled 1-bit
//! comparator, a discrete FIR feedback filter and a hold or pulsed DAC.
//!
//! The crate provides:
//! - exact closed-form propagation of the resonator ([`resonator`]),
//! - bit-exact loop simulation and locked-period measurement ([`loop_sim`]),
//! - the equivalent continuous-time delayed relay loop and its symmetric
//!   periodic regimes, solved exactly in the time domain with a harmonic-series
//!   residual as cross-check ([`ct_equiv`]),
//! - analytical step-width (resolution) bounds from the periods at the two
//!   extreme equivalent delays ([`resolution`]),
//! - devil's-staircase parameter sweeps ([`staircase`]).

pub mod ct_equiv;
pub mod error;
pub mod experiment;
pub mod loop_sim;
pub mod resolution;
pub mod resonator;
pub mod staircase;

pub use error::{Error, Result};
pub use experiment::ArchConfig;
pub use loop_sim::{Architecture, DacModel, FeedbackFilter, LoopConfig};
pub use resonator::{ResonatorParams, StateVector};
