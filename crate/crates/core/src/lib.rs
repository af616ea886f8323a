//! Regional public-service equalization analytics.
//!
//! The pipeline turns a region × year × indicator panel into efficacy scores
//! and composite subsystem scores ([`preprocess`]), couples two subsystems
//! ([`coupling`]), measures spatial autocorrelation ([`spatial`]), decomposes
//! inequality ([`theil`]), identifies weak counties with a dual cutoff
//! ([`shortboard`]) and estimates β-convergence ([`convergence`]).
//! [`report`] wires the stages together and writes the artifacts.

// `!(x >= lo)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convergence;
pub mod coupling;
pub mod error;
pub mod panel;
pub mod preprocess;
pub mod report;
pub mod shortboard;
pub mod spatial;
pub mod synthetic;
pub mod theil;

pub use error::{Error, Result};
