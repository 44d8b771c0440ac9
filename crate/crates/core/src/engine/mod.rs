//! Discrete-event loop over a multi-core node: ticks, preemption, switch
//! cost accounting, wakeup placement and idle balancing.

mod config;
pub mod placement;
mod sim;

pub use config::{RunConfig, SwitchCostModel};
pub use sim::{run, run_with, Dispatch, RunOptions, RunOutput, Workload};
