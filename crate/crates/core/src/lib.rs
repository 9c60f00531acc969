//! Models and protocol engine for an underwater decoy-state BB84 link.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. It covers the
//! physical models (water channel, weak-coherent-pulse source, polarization
//! algebra, gated single-photon receiver), the two-party session engine with
//! its framed wire format, classical post-processing (Cascade reconciliation,
//! Toeplitz privacy amplification) and the decoy-state key-rate analysis.
//!
//! File formats, sockets, configuration and the command line live in the
//! companion `uwqkd` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod channel;
pub mod detection;
mod error;
pub mod polarization;
pub mod postprocess;
pub mod protocol;
pub mod rng;
pub mod source;

pub use error::{Error, Result};
