//! Reconstruction of sparse firm-level production networks from a known
//! binary topology and node aggregates, together with the input-output
//! analytics, shock propagation and statistics used to evaluate it.

pub mod coeffs;
pub mod harmonize;
pub mod io;
pub mod metrics;
pub mod net;
pub mod recon;
pub mod rng;
pub mod sampling;
pub mod shocks;
pub mod synth;

pub use net::{FirmId, NetError, NodeAccounts, Topology, WeightedNetwork};
