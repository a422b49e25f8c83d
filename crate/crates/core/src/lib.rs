//! Core of the human-to-machine XR simulator.
//!
//! Everything here is pure computation over `alloc`: the discrete-event
//! engine, orientation math, head-motion predictors, the XR frame-size
//! model, traffic sources, the bandwidth-allocation control plane, the
//! two-stage FTTR-Business network model and the measurement plane. File
//! formats, the command line and parallel sweeps live in the `h2mxr` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod dba;
pub mod engine;
pub mod geometry;
pub mod metrics;
pub mod prediction;
pub mod synth;
pub mod topology;
pub mod traffic;
pub mod xr;

mod linalg;

pub use engine::{NodeId, RngStream, Scheduler, SimEvent, SimTime};
pub use geometry::{EulerAngles, HeadSample, HeadTrace, Quaternion};

/// Kilobyte convention used for every size quoted in KB.
pub const KB: f64 = 1024.0;

/// One-way fiber propagation delay per metre (light in glass, ~2e8 m/s).
pub const FIBER_DELAY_PER_M: f64 = 5e-9;
