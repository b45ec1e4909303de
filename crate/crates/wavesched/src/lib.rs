//! Simulation of WPP-parallel HEVC decoding on an asymmetric multicore.
//!
//! The crate models the CTU task graph of a frame ([`grid`]), per-CTU work
//! ([`workload`]), a big/LITTLE machine with its power model ([`platform`]),
//! four thread-to-core policies ([`policy`]) and a deterministic
//! discrete-event engine ([`engine`]). [`analysis`] turns event traces into
//! throughput and energy figures.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod calibrate;
pub mod config;
pub mod engine;
pub mod grid;
pub mod platform;
pub mod policy;
pub mod workload;

pub use analysis::{compute_metrics, SimReport};
pub use engine::{run_sweep, simulate, EventTrace, SimConfig, SimError};
pub use grid::{GridDims, WppGraph};
pub use platform::Platform;
pub use policy::{PolicyKind, PolicySpec};
pub use workload::{CostModel, WorkloadSpec};
