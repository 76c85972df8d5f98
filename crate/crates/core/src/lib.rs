//! Simulation and analytic models for a two-tier storage system: a fast
//! per-process page cache in front of a slow shared device tier.

pub mod rng;
pub mod workload;
pub mod cache;
pub mod eviction;
pub mod prefetch;
pub mod device;
pub mod ols;
pub mod queueing;
pub mod sim;
