//! Discrete-event simulation of hierarchical CPU group scheduling on a
//! multi-core node, with CFS, EEVDF, round-robin real-time and
//! latency-aware group scheduling (LAGS) policies.

pub mod engine;
pub mod error;
pub mod experiment;
pub mod load;
pub mod metrics;
pub mod policy;
pub mod sched;
pub mod types;
pub mod workload;

pub use error::{Error, Result};
