use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use super::trace::TraceEvent;
use super::{service_demand, FunctionSpec, Request};
use crate::error::{Error, Result};
use crate::types::{Micros, MICROS_PER_SEC};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalKind {
    /// Closed loop with a fixed number of outstanding requests per function.
    Steady,
    /// Open loop, bursty per-function Poisson (or a replayed trace).
    Trace,
    /// Open loop Poisson, rate drawn uniformly from 0..5 rps per function.
    Random,
}

/// Rate modulation for synthetic trace arrivals: every segment draws a
/// mean-one lognormal multiplier for each function's rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BurstParams {
    pub segment_us: Micros,
    pub sigma: f64,
}

impl Default for BurstParams {
    fn default() -> Self {
        BurstParams {
            segment_us: 5 * MICROS_PER_SEC,
            sigma: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClosedLoop {
    /// Outstanding requests per function at start.
    pub concurrency: u32,
    /// Latency the warmup tuning steers towards.
    pub target_latency_us: Micros,
    /// Tuning runs every interval until warmup ends.
    pub adjust_interval_us: Micros,
    pub self_tune: bool,
    pub max_concurrency: u32,
    /// Mean (exponential) gap between a completion and the next request.
    /// Unset: derived per function so it issues at roughly its own
    /// `rate_rps` when served promptly.
    pub think_us: Option<Micros>,
}

impl Default for ClosedLoop {
    fn default() -> Self {
        ClosedLoop {
            concurrency: 1,
            target_latency_us: 100_000,
            adjust_interval_us: 500_000,
            self_tune: true,
            max_concurrency: 16,
            think_us: None,
        }
    }
}

pub enum ArrivalPlan {
    Open(OpenArrivals),
    Closed(ClosedLoop),
}

struct FnGen {
    function: u32,
    rng: ChaCha8Rng,
    base_rate: f64,
    burst: Option<(Micros, LogNormal<f64>)>,
    seg_end: f64,
    seg_rate: f64,
    t: f64,
}

impl FnGen {
    fn new(function: u32, base_rate: f64, burst: &BurstParams, seed: u64) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ function as u64);
        let burst = (burst.sigma > 0.0 && burst.segment_us > 0).then(|| {
            let s = burst.sigma;
            (
                burst.segment_us,
                LogNormal::new(-s * s / 2.0, s).expect("valid lognormal"),
            )
        });
        let mut g = FnGen {
            function,
            rng,
            base_rate,
            burst,
            seg_end: 0.0,
            seg_rate: base_rate,
            t: 0.0,
        };
        g.new_segment();
        g
    }

    fn new_segment(&mut self) {
        match self.burst {
            Some((len, dist)) => {
                self.seg_end += len as f64;
                self.seg_rate = self.base_rate * dist.sample(&mut self.rng);
            }
            None => {
                self.seg_end = f64::INFINITY;
                self.seg_rate = self.base_rate;
            }
        }
    }

    fn next_time(&mut self, horizon: Micros) -> Option<Micros> {
        loop {
            if self.t >= horizon as f64 {
                return None;
            }
            if self.seg_rate <= 0.0 {
                if self.seg_end.is_infinite() {
                    return None;
                }
                self.t = self.seg_end;
                self.new_segment();
                continue;
            }
            let gap = Exp::new(self.seg_rate / MICROS_PER_SEC as f64)
                .expect("positive rate")
                .sample(&mut self.rng);
            if self.t + gap >= self.seg_end {
                self.t = self.seg_end;
                self.new_segment();
                continue;
            }
            self.t += gap;
            let at = self.t as Micros;
            return (at < horizon).then_some(at);
        }
    }
}

enum Source {
    Synthetic {
        gens: Vec<FnGen>,
        heap: BinaryHeap<Reverse<(Micros, u32)>>,
    },
    Replay {
        events: Vec<TraceEvent>,
        pos: usize,
    },
}

/// Time-ordered open-loop request stream, generated lazily. Service demands
/// come from each function's own random stream, so the sequence does not
/// depend on how requests are later scheduled.
pub struct OpenArrivals {
    specs: Vec<FunctionSpec>,
    horizon: Micros,
    next_id: u64,
    source: Source,
    demand_rngs: Vec<ChaCha8Rng>,
}

fn demand_rngs(n: usize, seed: u64) -> Vec<ChaCha8Rng> {
    (0..n)
        .map(|i| ChaCha8Rng::seed_from_u64(seed.rotate_left(17) ^ 0xd1b5_4a32_d192_ed03 ^ i as u64))
        .collect()
}

impl OpenArrivals {
    fn synthetic(specs: &[FunctionSpec], rates: Vec<f64>, horizon: Micros, seed: u64, burst: &BurstParams) -> Self {
        let mut gens: Vec<FnGen> = specs
            .iter()
            .zip(rates)
            .map(|(s, r)| FnGen::new(s.id, r, burst, seed))
            .collect();
        let mut heap = BinaryHeap::new();
        for (i, g) in gens.iter_mut().enumerate() {
            if let Some(t) = g.next_time(horizon) {
                heap.push(Reverse((t, i as u32)));
            }
        }
        OpenArrivals {
            specs: specs.to_vec(),
            horizon,
            next_id: 0,
            source: Source::Synthetic { gens, heap },
            demand_rngs: demand_rngs(specs.len(), seed),
        }
    }

    /// Replays `events` verbatim; function ids index into `specs`.
    pub fn replay(specs: &[FunctionSpec], mut events: Vec<TraceEvent>, horizon: Micros, seed: u64) -> Result<Self> {
        for e in &events {
            if e.function_id as usize >= specs.len() {
                return Err(Error::MalformedEvents(format!(
                    "trace references function {} but only {} exist",
                    e.function_id,
                    specs.len()
                )));
            }
        }
        events.sort_by_key(|e| (e.timestamp_us, e.function_id));
        events.retain(|e| e.timestamp_us < horizon);
        Ok(OpenArrivals {
            specs: specs.to_vec(),
            horizon,
            next_id: 0,
            source: Source::Replay {
                events,
                pos: 0,
            },
            demand_rngs: demand_rngs(specs.len(), seed),
        })
    }

    pub fn horizon(&self) -> Micros {
        self.horizon
    }

    fn emit(&mut self, function: u32, arrival: Micros) -> Request {
        let idx = function as usize;
        let (workers, demand) = service_demand(&self.specs[idx], &mut self.demand_rngs[idx]);
        let id = self.next_id;
        self.next_id += 1;
        Request {
            id,
            function,
            arrival,
            demand,
            workers,
            completion: None,
        }
    }
}

impl Iterator for OpenArrivals {
    type Item = Request;

    fn next(&mut self) -> Option<Request> {
        let horizon = self.horizon;
        let (function, at) = match &mut self.source {
            Source::Synthetic { gens, heap } => {
                let Reverse((t, i)) = heap.pop()?;
                let g = &mut gens[i as usize];
                let function = g.function;
                if let Some(nt) = g.next_time(horizon) {
                    heap.push(Reverse((nt, i)));
                }
                (function, t)
            }
            Source::Replay { events, pos } => {
                let e = events.get(*pos)?;
                *pos += 1;
                (e.function_id, e.timestamp_us)
            }
        };
        Some(self.emit(function, at))
    }
}

/// Builds the arrival process for `specs` over `[0, horizon)`.
pub fn gen_arrivals(
    kind: ArrivalKind,
    specs: &[FunctionSpec],
    horizon: Micros,
    seed: u64,
    burst: &BurstParams,
    closed: &ClosedLoop,
) -> Result<ArrivalPlan> {
    if horizon == 0 {
        return Err(Error::invalid("horizon_us", "must be > 0"));
    }
    Ok(match kind {
        ArrivalKind::Steady => ArrivalPlan::Closed(closed.clone()),
        ArrivalKind::Trace => {
            let rates = specs.iter().map(|s| s.rate_rps).collect();
            ArrivalPlan::Open(OpenArrivals::synthetic(specs, rates, horizon, seed, burst))
        }
        ArrivalKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
            let rates = specs.iter().map(|_| rng.random_range(0.0..5.0)).collect();
            let flat = BurstParams {
                segment_us: 0,
                sigma: 0.0,
            };
            ArrivalPlan::Open(OpenArrivals::synthetic(specs, rates, horizon, seed, &flat))
        }
    })
}
