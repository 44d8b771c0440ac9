//! Function populations, arrival processes and service demand.

mod arrivals;
mod population;
mod trace;

pub use arrivals::{gen_arrivals, ArrivalKind, ArrivalPlan, BurstParams, ClosedLoop, OpenArrivals};
pub use population::{synth_population, BandProfile, NUM_BANDS};
pub use trace::{read_trace, TraceEvent};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::TaskClass;
use crate::types::Micros;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceModel {
    Fixed { us: Micros },
    /// `(probability, demand_us)` pairs.
    Mix { choices: Vec<(f64, Micros)> },
    /// Every request needs `workers` threads that must all finish.
    Parallel { workers: u32, per_worker_us: Micros },
}

impl ServiceModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            ServiceModel::Fixed { us } if *us == 0 => {
                Err(Error::invalid("service.us", "demand must be > 0"))
            }
            ServiceModel::Mix { choices } => {
                if choices.is_empty() {
                    return Err(Error::invalid("service.choices", "empty mix"));
                }
                let total: f64 = choices.iter().map(|c| c.0).sum();
                if (total - 1.0).abs() > 1e-9 || choices.iter().any(|c| c.0 < 0.0) {
                    return Err(Error::invalid(
                        "service.choices",
                        format!("probabilities sum to {total}, expected 1"),
                    ));
                }
                if choices.iter().any(|c| c.1 == 0) {
                    return Err(Error::invalid("service.choices", "demand must be > 0"));
                }
                Ok(())
            }
            ServiceModel::Parallel {
                workers,
                per_worker_us,
            } => {
                if *workers == 0 {
                    return Err(Error::invalid("service.workers", "must be >= 1"));
                }
                if *per_worker_us == 0 {
                    return Err(Error::invalid("service.per_worker_us", "must be > 0"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Expected CPU time per request, summed over workers.
    pub fn mean_work_us(&self) -> f64 {
        match self {
            ServiceModel::Fixed { us } => *us as f64,
            ServiceModel::Mix { choices } => choices.iter().map(|&(p, d)| p * d as f64).sum(),
            ServiceModel::Parallel {
                workers,
                per_worker_us,
            } => *workers as f64 * *per_worker_us as f64,
        }
    }

    pub fn workers(&self) -> u32 {
        match self {
            ServiceModel::Parallel { workers, .. } => *workers,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub id: u32,
    /// 1 (lightest) to 10 (heaviest).
    pub demand_band: u8,
    pub rate_rps: f64,
    pub service_model: ServiceModel,
    pub flagged: bool,
    pub class: TaskClass,
    pub max_threads: u32,
}

/// Draws `(workers, per_worker_us)` for one request.
pub fn service_demand<R: Rng + ?Sized>(spec: &FunctionSpec, rng: &mut R) -> (u32, Micros) {
    match &spec.service_model {
        ServiceModel::Fixed { us } => (1, *us),
        ServiceModel::Mix { choices } => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for &(p, d) in choices {
                acc += p;
                if u < acc {
                    return (1, d);
                }
            }
            (1, choices.last().expect("validated non-empty").1)
        }
        ServiceModel::Parallel {
            workers,
            per_worker_us,
        } => (*workers, *per_worker_us),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Request {
    pub id: u64,
    pub function: u32,
    pub arrival: Micros,
    /// CPU demand of each worker.
    pub demand: Micros,
    pub workers: u32,
    pub completion: Option<Micros>,
}
