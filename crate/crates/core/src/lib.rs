//! Surface-loss analysis for superconducting qubits.
//!
//! The crate covers the chain from electrostatics of planar electrodes to
//! loss tangents fitted on measured devices:
//!
//! - [`em`]: boundary-element solver for coplanar strips on a substrate.
//! - [`participation`]: thin-layer energy participation ratios.
//! - [`loss_model`]: weighted linear fits of 1/Q against participation.
//! - [`qubit`]: T1 decay fits, Purcell correction and Q statistics.
//! - [`dataset`] and [`pipeline`]: device table ingestion and reports.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod em;
pub mod error;
pub mod loss_model;
pub mod participation;
pub mod pipeline;
pub mod qubit;
pub mod units;

pub use error::{Error, Result};
