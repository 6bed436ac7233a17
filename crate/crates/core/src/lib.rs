//! Statistical MIMO power-line channel generator.
//!
//! The crate covers the whole loop: a compact parameter set is expanded into
//! a frequency/mode covariance and sampled into complex channel frequency
//! responses ([`generator`]); the characterization pipeline estimates the
//! parameters back from any channel set ([`characterization`]); and
//! [`metrics`] and [`capacity`] compute the usual validation statistics.

pub mod capacity;
pub mod characterization;
pub mod covariance;
pub mod error;
pub mod generator;
pub mod io;
pub mod metrics;
pub mod model;

pub use error::{Error, Result};
pub use model::{ChannelSet, MimoGrid, ModeCombination, ModelParameters, RxPort, Scheme, TxPort};
