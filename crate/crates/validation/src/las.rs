//! Least-Attained-Service reference for small single-core cases, and the
//! matching LAGS run through the simulator.
//!
//! The oracle makes a decision at every arrival, every completion and every
//! multiple of the quantum, and serves the group with the least CPU received
//! so far. On a tie the running group keeps the CPU, otherwise the lowest
//! index wins. Inside that group the request with the lowest virtual service
//! runs; a newcomer starts level with the least-served request already
//! waiting, the way a fair queue places new entities at its minimum.
//!
//! Runs are compared on each group's cumulative CPU service over time. LAS
//! fixes that curve but not the order of requests inside a group, and the
//! latter can move single completions a long way: a request left a few
//! microseconds short when its group overtakes another waits behind every
//! less-served group, including later arrivals.

use cgsched::engine::{self, RunConfig, RunOptions, SwitchCostModel, Workload};
use cgsched::policy::{PolicyKind, TaskClass};
use cgsched::types::Micros;
use cgsched::workload::{ArrivalPlan, FunctionSpec, OpenArrivals, ServiceModel, TraceEvent};
use cgsched::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct LasGroup {
    /// CPU demand of every request of this group.
    pub demand_us: Micros,
    /// Request arrival times.
    pub arrivals: Vec<Micros>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LasCase {
    pub groups: Vec<LasGroup>,
}

impl LasCase {
    fn last_arrival(&self) -> Micros {
        self.groups.iter().flat_map(|g| g.arrivals.iter().copied()).max().unwrap_or(0)
    }

    fn total_demand(&self) -> Micros {
        self.groups.iter().map(|g| g.demand_us * g.arrivals.len() as Micros).sum()
    }
}

struct Req {
    group: usize,
    arrival: Micros,
    left: Micros,
    /// Virtual service; set on arrival.
    v: Option<Micros>,
}

/// `(arrival, completion)` of every finished request, per group.
pub type Spans = Vec<Vec<(Micros, Micros)>>;

/// CPU given to one group without interruption.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slice {
    pub group: usize,
    pub start: Micros,
    pub len: Micros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    /// Per group, in completion order.
    pub spans: Spans,
    pub service: Vec<Slice>,
}

impl Schedule {
    /// CPU received by `group` up to `t`.
    pub fn service_at(&self, group: usize, t: Micros) -> Micros {
        self.service
            .iter()
            .filter(|s| s.group == group && s.start < t)
            .map(|s| s.len.min(t - s.start))
            .sum()
    }

    fn push(&mut self, group: usize, start: Micros, len: Micros) {
        if len == 0 {
            return;
        }
        match self.service.last_mut() {
            Some(l) if l.group == group && l.start + l.len == start => l.len += len,
            _ => self.service.push(Slice { group, start, len }),
        }
    }

    fn new(groups: usize) -> Self {
        Schedule {
            spans: vec![Vec::new(); groups],
            service: Vec::new(),
        }
    }

    fn sort_spans(&mut self) {
        for d in &mut self.spans {
            d.sort_unstable_by_key(|&(a, c)| (c, a));
        }
    }
}

/// The case under LAS.
pub fn oracle(case: &LasCase, quantum: Micros) -> Schedule {
    let mut reqs: Vec<Req> = Vec::new();
    for (g, grp) in case.groups.iter().enumerate() {
        for &a in &grp.arrivals {
            reqs.push(Req {
                group: g,
                arrival: a,
                left: grp.demand_us,
                v: None,
            });
        }
    }
    let mut attained = vec![0 as Micros; case.groups.len()];
    // Virtual service floor per group, kept across idle spells.
    let mut floor = vec![0 as Micros; case.groups.len()];
    let mut out = Schedule::new(case.groups.len());
    let mut t: Micros = 0;
    let mut running: Option<usize> = None;
    loop {
        let active = |r: &Req| r.left > 0 && r.arrival <= t;
        let Some(g) = reqs
            .iter()
            .filter(|r| active(r))
            .map(|r| r.group)
            .min_by_key(|&g| (attained[g], running != Some(g), g))
        else {
            match reqs.iter().filter(|r| r.left > 0).map(|r| r.arrival).min() {
                Some(next) => {
                    t = next;
                    continue;
                }
                None => break,
            }
        };
        let mine: Vec<usize> = (0..reqs.len()).filter(|&i| reqs[i].group == g && active(&reqs[i])).collect();
        if let Some(m) = mine.iter().filter_map(|&i| reqs[i].v).min() {
            floor[g] = floor[g].max(m);
        }
        for &i in &mine {
            reqs[i].v.get_or_insert(floor[g]);
        }
        let i = *mine
            .iter()
            .min_by_key(|&&i| (reqs[i].v, reqs[i].arrival, i))
            .expect("group has an active request");
        running = Some(g);
        // Never step over the next arrival: it may change the choice.
        let next_arrival = reqs.iter().filter(|r| r.arrival > t).map(|r| r.arrival).min();
        let mut dt = (quantum - t % quantum).min(reqs[i].left);
        if let Some(n) = next_arrival {
            dt = dt.min(n - t);
        }
        reqs[i].left -= dt;
        reqs[i].v = reqs[i].v.map(|v| v + dt);
        attained[g] += dt;
        out.push(g, t, dt);
        t += dt;
        if reqs[i].left == 0 {
            running = None;
            out.spans[g].push((reqs[i].arrival, t));
        }
    }
    out.sort_spans();
    out
}

/// The same case under LAGS: one core, every group flagged, unbounded Load
/// Credit window, free context switches.
pub fn simulate(case: &LasCase) -> Result<Schedule> {
    simulate_with(case, PolicyKind::Lags)
}

/// Same run under any policy; used to show the comparison can tell
/// policies apart.
pub fn simulate_with(case: &LasCase, policy: PolicyKind) -> Result<Schedule> {
    let specs: Vec<FunctionSpec> = case
        .groups
        .iter()
        .enumerate()
        .map(|(i, g)| FunctionSpec {
            id: i as u32,
            demand_band: 1,
            rate_rps: 1.0,
            service_model: ServiceModel::Fixed { us: g.demand_us },
            flagged: true,
            class: TaskClass::Fair,
            max_threads: 32,
        })
        .collect();
    let mut events: Vec<TraceEvent> = Vec::new();
    for (i, g) in case.groups.iter().enumerate() {
        for &a in &g.arrivals {
            events.push(TraceEvent {
                function_id: i as u32,
                timestamp_us: a,
            });
        }
    }
    let horizon = case.last_arrival() + case.total_demand() + 1_000_000;
    let cfg = RunConfig {
        cores: 1,
        policy,
        switch_cost: SwitchCostModel {
            base_us: 0,
            per_level_us: 0,
        },
        horizon_us: horizon,
        load_credit_window_ticks: 0,
        ..RunConfig::default()
    };
    let wl = Workload {
        arrivals: ArrivalPlan::Open(OpenArrivals::replay(&specs, events, horizon, 1)?),
        functions: specs,
        depth: 1,
        warmup_us: 0,
    };
    let opts = RunOptions {
        record_dispatches: true,
        ..RunOptions::default()
    };
    let run = engine::run_with(&cfg, wl, opts)?;
    let mut out = Schedule::new(case.groups.len());
    for s in &run.metrics.latency_samples {
        if s.completed {
            out.spans[s.function as usize].push((s.arrival, s.arrival + s.latency));
        }
    }
    out.sort_spans();
    // The core is busy exactly while a request is outstanding (switches are
    // free and the policy is work conserving), and the task dispatched last
    // holds it until the next dispatch.
    let mut busy: Vec<(Micros, Micros)> = Vec::new();
    let mut all: Vec<(Micros, Micros)> = out.spans.iter().flatten().copied().collect();
    all.sort_unstable();
    for (a, c) in all {
        match busy.last_mut() {
            Some(l) if a <= l.1 => l.1 = l.1.max(c),
            _ => busy.push((a, c)),
        }
    }
    let d = &run.dispatches;
    for (k, x) in d.iter().enumerate() {
        let end = d.get(k + 1).map_or(horizon, |n| n.time);
        for &(a, c) in &busy {
            let (lo, hi) = (a.max(x.time), c.min(end));
            if lo < hi {
                out.push(x.function as usize, lo, hi - lo);
            }
        }
    }
    Ok(out)
}

/// Groups whose request count differs, and groups whose cumulative service
/// strays more than `tolerance` from the oracle's at some instant. Both
/// curves are piecewise linear, so checking every slice boundary suffices.
pub fn disagreements(oracle: &Schedule, sim: &Schedule, tolerance: Micros) -> Vec<String> {
    let mut out = Vec::new();
    for (g, (o, s)) in oracle.spans.iter().zip(&sim.spans).enumerate() {
        if o.len() != s.len() {
            out.push(format!("group {g}: oracle finished {} requests, simulator {}", o.len(), s.len()));
        }
    }
    if !out.is_empty() {
        return out;
    }
    let mut points: Vec<Micros> = oracle
        .service
        .iter()
        .chain(&sim.service)
        .flat_map(|s| [s.start, s.start + s.len])
        .collect();
    points.sort_unstable();
    points.dedup();
    for g in 0..oracle.spans.len() {
        let worst = points
            .iter()
            .map(|&t| (t, oracle.service_at(g, t), sim.service_at(g, t)))
            .max_by_key(|&(t, o, s)| (o.abs_diff(s), std::cmp::Reverse(t)));
        if let Some((t, o, s)) = worst {
            if o.abs_diff(s) > tolerance {
                out.push(format!("group {g} at {t}us: {s}us of service, oracle {o}us"));
            }
        }
    }
    out
}

/// Slack for [`disagreements`]: groups tied on attained service take turns
/// one quantum at a time, so which of them is ahead at a given instant
/// depends on rotation order. That puts a group up to one quantum per other
/// group behind, plus the partial quantum in progress when the tie formed.
pub fn tolerance(case: &LasCase, quantum: Micros) -> Micros {
    quantum * case.groups.len().max(1) as Micros
}

/// Deterministic family of cases: 1 to 5 groups with 1 to 3 requests each,
/// demands and arrival offsets drawn from small fixed menus.
pub fn case_grid() -> Vec<LasCase> {
    const DEMANDS: [Micros; 4] = [3_000, 9_000, 20_000, 47_000];
    const OFFSETS: [Micros; 4] = [0, 5_000, 17_000, 40_000];
    let mut cases = Vec::new();
    for groups in 1..=5usize {
        for reqs in 1..=3usize {
            for variant in 0..16usize {
                let grp = (0..groups)
                    .map(|g| {
                        let k = variant + 3 * g;
                        LasGroup {
                            demand_us: DEMANDS[(k + g) % DEMANDS.len()],
                            arrivals: (0..reqs)
                                .map(|r| OFFSETS[(k / 4 + r + g) % OFFSETS.len()] + 23_000 * r as Micros)
                                .collect(),
                        }
                    })
                    .collect();
                cases.push(LasCase { groups: grp });
            }
        }
    }
    cases
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn oracle_single_request() {
        let c = LasCase {
            groups: vec![LasGroup {
                demand_us: 10_000,
                arrivals: vec![5_000],
            }],
        };
        let o = oracle(&c, 10);
        assert_eq!(o.spans, vec![vec![(5_000, 15_000)]]);
        assert_eq!(
            o.service,
            vec![Slice {
                group: 0,
                start: 5_000,
                len: 10_000
            }]
        );
    }

    #[test]
    fn oracle_serves_newcomer_first() {
        // A has 40ms of service when B arrives; B's 10ms run to completion
        // before A resumes.
        let c = LasCase {
            groups: vec![
                LasGroup {
                    demand_us: 100_000,
                    arrivals: vec![0],
                },
                LasGroup {
                    demand_us: 10_000,
                    arrivals: vec![40_000],
                },
            ],
        };
        let d = oracle(&c, 10).spans;
        assert_eq!(d[1], vec![(40_000, 50_000)]);
        assert_eq!(d[0], vec![(0, 110_000)]);
    }

    #[test]
    fn oracle_equal_groups_share() {
        let g = LasGroup {
            demand_us: 10_000,
            arrivals: vec![0],
        };
        let d = oracle(
            &LasCase {
                groups: vec![g.clone(), g],
            },
            10,
        )
        .spans;
        // Fluid sharing finishes both at 20ms; quanta split them slightly.
        assert!(d.iter().all(|g| g[0].1 >= 19_980), "{d:?}");
    }

    fn sched(spans: Spans, slices: &[(usize, Micros, Micros)]) -> Schedule {
        let service = slices
            .iter()
            .map(|&(group, start, len)| Slice { group, start, len })
            .collect();
        Schedule { spans, service }
    }

    #[test]
    fn disagreement_detection() {
        let spans = vec![vec![(0, 10_000)], vec![(0, 50_000)]];
        let o = sched(spans.clone(), &[(0, 0, 10_000), (1, 10_000, 40_000)]);
        let close = sched(spans.clone(), &[(1, 0, 3_000), (0, 3_000, 10_000), (1, 13_000, 37_000)]);
        assert!(disagreements(&o, &close, 4_000).is_empty());
        let swapped = sched(spans, &[(1, 0, 40_000), (0, 40_000, 10_000)]);
        let d = disagreements(&o, &swapped, 4_000);
        assert_eq!(d.len(), 2, "{d:?}");
        assert!(d[0].starts_with("group 0 at 10000us: 0us"), "{d:?}");
        let short = sched(vec![vec![(0, 10_000)], vec![]], &[]);
        assert_eq!(disagreements(&o, &short, 4_000).len(), 1);
    }

    #[test]
    fn service_at_clips_slices() {
        let s = sched(vec![], &[(0, 10, 5), (1, 15, 5), (0, 20, 5)]);
        assert_eq!(s.service_at(0, 10), 0);
        assert_eq!(s.service_at(0, 12), 2);
        assert_eq!(s.service_at(0, 22), 7);
        assert_eq!(s.service_at(1, 100), 5);
    }

    #[test]
    fn simulated_service_matches_demand() {
        let c = &case_grid()[200];
        let s = simulate(c).unwrap();
        for (g, grp) in c.groups.iter().enumerate() {
            let want = grp.demand_us * grp.arrivals.len() as Micros;
            assert_eq!(s.service_at(g, Micros::MAX), want, "group {g}");
        }
        assert!(s.service.windows(2).all(|w| w[0].start + w[0].len <= w[1].start));
    }

    #[test]
    fn fair_share_is_distinguishable() {
        let bad = case_grid()
            .iter()
            .filter(|c| {
                let s = simulate_with(c, PolicyKind::Cfs).unwrap();
                !disagreements(&oracle(c, 4_000), &s, tolerance(c, 4_000)).is_empty()
            })
            .count();
        assert!(bad >= 10, "only {bad} cases separate CFS from LAS");
    }

    #[test]
    fn stranded_sliver_is_not_a_disagreement() {
        // Group 1's last request finishes 1us short of its demand when the
        // group overtakes group 2 and then waits for two later arrivals, a
        // completion 22ms after the oracle's. Its service curve stays within
        // a microsecond of the oracle's throughout.
        let g = |demand_us, arrivals: &[Micros]| LasGroup {
            demand_us,
            arrivals: arrivals.to_vec(),
        };
        let c = LasCase {
            groups: vec![
                g(9_518, &[71_727]),
                g(6_390, &[40_979, 38_590, 22_702]),
                g(16_780, &[21_544, 21_544]),
                g(9_589, &[62_138]),
            ],
        };
        let (o, s) = (oracle(&c, 4_000), simulate(&c).unwrap());
        let last = |x: &Schedule| x.spans[1].last().unwrap().1;
        assert!(last(&s) > last(&o) + 20_000);
        let d = disagreements(&o, &s, tolerance(&c, 4_000));
        assert!(d.is_empty(), "{d:?}");
    }

    fn case() -> impl Strategy<Value = LasCase> {
        let group = (1_000u64..50_000, prop::collection::vec(0u64..100_000, 1..=3))
            .prop_map(|(demand_us, arrivals)| LasGroup { demand_us, arrivals });
        prop::collection::vec(group, 1..=5).prop_map(|groups| LasCase { groups })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn lags_matches_las_on_random_cases(c in case()) {
            let s = simulate(&c).unwrap();
            let d = disagreements(&oracle(&c, 4_000), &s, tolerance(&c, 4_000));
            prop_assert!(d.is_empty(), "{d:?}");
        }
    }

    #[test]
    fn grid_shape() {
        let g = case_grid();
        assert_eq!(g.len(), 5 * 3 * 16);
        assert!(g.iter().all(|c| (1..=5).contains(&c.groups.len())));
    }
}
