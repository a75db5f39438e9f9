//! Simulator of a 1 km fiber Mach-Zehnder interferometer held at quadrature
//! by a PID loop driving a piezo fiber stretcher, with gated single-photon
//! detection at both output ports.
//!
//! The crate is organized bottom-up:
//!
//! - [`plant`]: phase drift, stretcher and modulator, port fractions
//! - [`control`]: setpoint calibration, PID, range resets
//! - [`detection`]: click probabilities and count sampling
//! - [`analysis`]: visibility, fringe fits, summaries
//! - [`harness`]: configuration, scenarios, CSV output

// `!(x > 0.0)` is used on purpose so that NaN fails the check too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod control;
pub mod detection;
pub mod error;
pub mod harness;
pub mod plant;

pub use error::{Error, Result, Violation};
