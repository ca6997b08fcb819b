//! Control-plane logic and physical-layer models for a metropolitan
//! entanglement-distribution network.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the CLI and the
//! HTTP service live in the `qnet-gateway` crate.

#![no_std]
// NaN must fail range checks, so `!(x > 0.0)` is intended.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod calibration;
pub mod coexistence;
pub mod controlplane;
pub mod jones;
mod numeric;
pub mod photonics;
pub mod rwa;
pub mod simkernel;
pub mod topology;
