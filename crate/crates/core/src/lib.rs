//! Peak-amplitude detection for single- and three-phase sinusoidal signals
//! from the width of the pulse a fixed-threshold comparator produces around
//! every zero crossing.
//!
//! The crate models the complete measurement chain:
//!
//! * [`siggen`] synthesizes test waveforms with unbalance, harmonics and
//!   timed disturbances.
//! * [`frontend`] models the analog input: low-pass filtering, isolation
//!   clipping, the threshold comparator and the three-phase pulse adder.
//! * [`capture`] models the processor's timer capture: quantization,
//!   deglitching, width/frequency measurement and phase tagging.
//! * [`estimator`] inverts a pulse width into a peak amplitude.
//! * [`analyzer`] aggregates per-phase estimates into angle, sequence,
//!   unbalance and fault reports.
//! * [`pipeline`] wires the stages together and [`experiment`] runs the
//!   reproduction scenarios that back the command-line harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyzer;
pub mod capture;
pub mod estimator;
pub mod experiment;
pub mod frontend;
pub mod io;
pub mod label;
pub mod pipeline;
pub mod siggen;

pub use label::{CrossingDirection, Label, Quality};
