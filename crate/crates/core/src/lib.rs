//! Latency-aware planning for split federated learning over wireless links.
//!
//! The pipeline profiles a network layer by layer, models device compute and
//! uplink latency, picks every device's split point by optimal stopping,
//! shares the uplink bandwidth so that devices finish together, and
//! alternates the two until the split vector settles. A Monte-Carlo round
//! simulator, a convergence-bound calculator and a small dense-network
//! trainer complete the toolkit.

pub mod bandwidth;
pub mod cli;
pub mod convergence;
pub mod error;
pub mod joint;
pub mod presets;
pub mod profiler;
pub mod scenario;
pub mod simulator;
pub mod split;
pub mod trainer;
pub mod wireless;

pub use error::{Result, SflError};
