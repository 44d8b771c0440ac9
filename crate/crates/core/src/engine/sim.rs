use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::config::RunConfig;
use super::placement::{self, CoreView};
use crate::error::{Error, Result};
use crate::metrics::{LatencySample, RunMetrics, DEFAULT_LATENCY_TARGET_US};
use crate::policy::{PolicyKind, TaskClass, RT_PERIOD_US};
use crate::sched::Scheduler;
use crate::types::{CoreId, EntityId, GroupId, Micros, NICE_0_WEIGHT};
use crate::workload::{service_demand, ArrivalPlan, ClosedLoop, FunctionSpec, OpenArrivals, Request};

/// Function population plus the process that drives it.
pub struct Workload {
    pub functions: Vec<FunctionSpec>,
    pub arrivals: ArrivalPlan,
    /// Group levels from the root down to each function's own group.
    /// 1 puts function groups directly under the root.
    pub depth: u32,
    /// Requests arriving before this are not measured.
    pub warmup_us: Micros,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub record_dispatches: bool,
    /// Run structural scheduler checks at every balance point.
    pub check_invariants: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dispatch {
    pub time: Micros,
    pub core: CoreId,
    pub function: u32,
    pub task: EntityId,
    pub levels: usize,
}

pub struct RunOutput {
    pub metrics: RunMetrics,
    pub dispatches: Vec<Dispatch>,
}

pub fn run(cfg: &RunConfig, workload: Workload) -> Result<RunMetrics> {
    Ok(run_with(cfg, workload, RunOptions::default())?.metrics)
}

pub fn run_with(cfg: &RunConfig, workload: Workload, opts: RunOptions) -> Result<RunOutput> {
    let mut sim = Sim::new(cfg, workload, opts)?;
    sim.run()?;
    Ok(RunOutput {
        metrics: sim.m,
        dispatches: sim.log,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Completion { core: CoreId, gen: u64 },
    Arrival,
    Issue { function: u32 },
    Tick,
    SliceExpiry { core: CoreId, gen: u64 },
    Unthrottle { core: CoreId },
    Balance,
    Tune,
}

impl Kind {
    fn rank(self) -> u8 {
        match self {
            Kind::Completion { .. } => 0,
            Kind::Arrival | Kind::Issue { .. } => 1,
            Kind::Tick => 2,
            Kind::SliceExpiry { .. } | Kind::Unthrottle { .. } => 3,
            Kind::Balance => 4,
            Kind::Tune => 5,
        }
    }
}

#[derive(Debug, PartialEq, Eq)]
struct Event {
    time: Micros,
    rank: u8,
    seq: u64,
    kind: Kind,
}

impl Ord for Event {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, o: &Self) -> Ordering {
        (o.time, o.rank, o.seq).cmp(&(self.time, self.rank, self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Why {
    Wake,
    Block,
    Tick,
    Slice,
    Balance,
}

#[derive(Clone, Copy, Debug)]
struct Unit {
    req: usize,
    remaining: Micros,
}

struct Thread {
    task: EntityId,
    function: u32,
    unit: Option<Unit>,
    wait_since: Option<Micros>,
}

struct ReqState {
    arrival: Micros,
    function: u32,
    workers_left: u32,
}

struct FnState {
    group: GroupId,
    idle: Vec<usize>,
    nthreads: u32,
    pending: VecDeque<Unit>,
    // Closed loop only.
    concurrency: u32,
    inflight: u32,
    think_mean: f64,
    rng: ChaCha8Rng,
    lat_sum: f64,
    lat_n: u64,
}

struct CoreState {
    /// Time up to which this core's busy/idle/overhead is accounted.
    /// Runs ahead of the clock while a switch is being paid for.
    cursor: Micros,
    gen: u64,
    rr_gen: u64,
    cached_credit: f64,
    unthrottle_armed: bool,
}

const NO_THREAD: u32 = u32::MAX;

struct Sim<'a> {
    cfg: &'a RunConfig,
    policy: PolicyKind,
    sched: Scheduler,
    specs: Vec<FunctionSpec>,
    fns: Vec<FnState>,
    threads: Vec<Thread>,
    thread_of: Vec<u32>,
    cores: Vec<CoreState>,
    reqs: Vec<ReqState>,
    events: BinaryHeap<Event>,
    seq: u64,
    now: Micros,
    warmup: Micros,
    open: Option<OpenArrivals>,
    next_open: Option<Request>,
    closed: Option<ClosedLoop>,
    tick_idx: u64,
    opts: RunOptions,
    m: RunMetrics,
    log: Vec<Dispatch>,
}

fn fnv(h: u64, x: u64) -> u64 {
    (h ^ x).wrapping_mul(0x0000_0100_0000_01b3)
}

fn validate_workload(cfg: &RunConfig, w: &Workload) -> Result<()> {
    if w.functions.is_empty() {
        return Err(Error::invalid("workload.functions", "need at least one function"));
    }
    for (i, f) in w.functions.iter().enumerate() {
        if f.id as usize != i {
            return Err(Error::invalid("workload.functions", format!("function {i} has id {}", f.id)));
        }
        if f.max_threads == 0 {
            return Err(Error::invalid("workload.max_threads", "must be >= 1"));
        }
        f.service_model.validate()?;
    }
    if w.depth == 0 {
        return Err(Error::invalid("workload.depth", "must be >= 1"));
    }
    if w.warmup_us >= cfg.horizon_us {
        return Err(Error::invalid("workload.warmup_us", "must be shorter than the horizon"));
    }
    Ok(())
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a RunConfig, w: Workload, opts: RunOptions) -> Result<Self> {
        cfg.validate()?;
        validate_workload(cfg, &w)?;
        let mut sched = Scheduler::new(cfg.sched_policy(), cfg.cores, cfg.credit_window());
        let mut parent = GroupId::ROOT;
        for level in 1..w.depth {
            parent = sched.add_group(parent, &format!("level-{level}"), false)?;
        }
        let (open, closed) = match w.arrivals {
            ArrivalPlan::Open(o) => (Some(o), None),
            ArrivalPlan::Closed(c) => (None, Some(c)),
        };
        let mut fns = Vec::with_capacity(w.functions.len());
        for spec in &w.functions {
            let group = sched.add_group(parent, &format!("func-{}", spec.id), spec.flagged)?;
            let think_mean = match closed.as_ref().and_then(|c| c.think_us) {
                Some(t) => t as f64,
                None if spec.rate_rps > 0.0 => (1e6 / spec.rate_rps - spec.service_model.mean_work_us()).max(0.0),
                None => f64::INFINITY,
            };
            fns.push(FnState {
                group,
                idle: Vec::new(),
                nthreads: 0,
                pending: VecDeque::new(),
                concurrency: 0,
                inflight: 0,
                think_mean,
                rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ (0xa076_1d64_78bd_642f_u64.wrapping_mul(spec.id as u64 + 1))),
                lat_sum: 0.0,
                lat_n: 0,
            });
        }
        let cores = (0..cfg.cores)
            .map(|_| CoreState {
                cursor: 0,
                gen: 0,
                rr_gen: 0,
                cached_credit: f64::INFINITY,
                unthrottle_armed: false,
            })
            .collect();
        let m = RunMetrics {
            policy: Some(cfg.policy),
            cores: cfg.cores,
            horizon: cfg.horizon_us,
            warmup: w.warmup_us,
            seed: cfg.seed,
            busy: vec![0; cfg.cores],
            idle: vec![0; cfg.cores],
            overhead: vec![0; cfg.cores],
            function_cpu: vec![0; w.functions.len()],
            digest: 0xcbf2_9ce4_8422_2325,
            ..Default::default()
        };
        Ok(Sim {
            cfg,
            policy: cfg.policy,
            sched,
            specs: w.functions,
            fns,
            threads: Vec::new(),
            thread_of: Vec::new(),
            cores,
            reqs: Vec::new(),
            events: BinaryHeap::new(),
            seq: 0,
            now: 0,
            warmup: w.warmup_us,
            open,
            next_open: None,
            closed,
            tick_idx: 0,
            opts,
            m,
            log: Vec::new(),
        })
    }

    fn push(&mut self, time: Micros, kind: Kind) {
        self.seq += 1;
        self.events.push(Event {
            time,
            rank: kind.rank(),
            seq: self.seq,
            kind,
        });
    }

    fn horizon(&self) -> Micros {
        self.cfg.horizon_us
    }

    fn run(&mut self) -> Result<()> {
        self.push(self.cfg.tick_us, Kind::Tick);
        self.push(self.cfg.balance_interval_us, Kind::Balance);
        if let Some(o) = self.open.as_mut() {
            self.next_open = o.next();
            if let Some(r) = self.next_open {
                self.push(r.arrival, Kind::Arrival);
            }
        }
        if let Some(c) = self.closed.clone() {
            for f in 0..self.fns.len() {
                if self.fns[f].think_mean.is_infinite() {
                    continue;
                }
                self.fns[f].concurrency = c.concurrency;
                for _ in 0..c.concurrency {
                    self.fns[f].inflight += 1;
                    let at = self.think(f);
                    self.push(at, Kind::Issue { function: f as u32 });
                }
            }
            if c.self_tune && c.adjust_interval_us > 0 && c.adjust_interval_us < self.warmup {
                self.push(c.adjust_interval_us, Kind::Tune);
            }
        }
        while let Some(ev) = self.events.pop() {
            if ev.time >= self.horizon() {
                break;
            }
            if ev.time < self.now {
                return Err(Error::MalformedEvents(format!(
                    "event at {} after clock reached {}",
                    ev.time, self.now
                )));
            }
            self.now = ev.time;
            self.handle(ev.kind)?;
        }
        self.finish()
    }

    fn handle(&mut self, kind: Kind) -> Result<()> {
        let now = self.now;
        match kind {
            Kind::Completion { core, gen } => {
                if gen == self.cores[core].gen {
                    self.on_completion(core, now)?;
                }
            }
            Kind::Arrival => {
                let r = self
                    .next_open
                    .take()
                    .ok_or_else(|| Error::bookkeeping("arrival event without a request"))?;
                self.arrive(r.function as usize, r.workers, r.demand, now)?;
                self.next_open = self.open.as_mut().and_then(Iterator::next);
                if let Some(n) = self.next_open {
                    if n.arrival < now {
                        return Err(Error::MalformedEvents(format!(
                            "arrival at {} follows one at {now}",
                            n.arrival
                        )));
                    }
                    self.push(n.arrival, Kind::Arrival);
                }
            }
            Kind::Issue { function } => {
                let f = function as usize;
                let (workers, demand) = service_demand(&self.specs[f], &mut self.fns[f].rng);
                self.arrive(f, workers, demand, now)?;
            }
            Kind::Tick => self.on_tick(now)?,
            Kind::SliceExpiry { core, gen } => {
                if gen == self.cores[core].rr_gen {
                    self.on_slice_expiry(core, now)?;
                }
            }
            Kind::Unthrottle { core } => {
                self.cores[core].unthrottle_armed = false;
                let curr_rr = self
                    .sched
                    .core(core)
                    .curr
                    .is_some_and(|t| self.sched.entity(t).class == TaskClass::Rr);
                if !curr_rr && !self.sched.core(core).rt.is_empty() {
                    self.schedule(core, now, Why::Wake)?;
                }
            }
            Kind::Balance => self.on_balance(now)?,
            Kind::Tune => self.on_tune(now),
        }
        Ok(())
    }

    // ---- time accounting ----

    fn account(&mut self, core: CoreId, now: Micros) -> Result<()> {
        let cursor = self.cores[core].cursor;
        if now <= cursor {
            return Ok(());
        }
        let delta = now - cursor;
        self.cores[core].cursor = now;
        let Some(task) = self.sched.core(core).curr else {
            self.m.idle[core] += delta;
            return Ok(());
        };
        self.m.busy[core] += delta;
        self.sched.update_curr(core, delta)?;
        let ti = self.thread_idx(task)?;
        let th = &mut self.threads[ti];
        let unit = th
            .unit
            .as_mut()
            .ok_or_else(|| Error::bookkeeping(format!("{task} runs without work")))?;
        if unit.remaining < delta {
            return Err(Error::bookkeeping(format!(
                "{task} ran {delta}us with {}us left",
                unit.remaining
            )));
        }
        unit.remaining -= delta;
        self.m.function_cpu[th.function as usize] += delta;
        if self.sched.entity(task).class == TaskClass::Rr {
            // Split the charge at window boundaries.
            let params = &self.cfg.policy_params;
            let mut t = cursor;
            while t < now {
                let end = ((t / RT_PERIOD_US + 1) * RT_PERIOD_US).min(now);
                self.sched.rt_mut(core).charge(t, end - t, params);
                t = end;
            }
        }
        Ok(())
    }

    fn thread_idx(&self, task: EntityId) -> Result<usize> {
        match self.thread_of.get(task.index()) {
            Some(&i) if i != NO_THREAD => Ok(i as usize),
            _ => Err(Error::bookkeeping(format!("{task} is not a worker thread"))),
        }
    }

    // ---- scheduling ----

    fn pick(&mut self, core: CoreId, now: Micros) -> Result<Option<(EntityId, usize)>> {
        if let Some(t) = self.sched.rt_mut(core).schedule(now) {
            return Ok(Some((t, 0)));
        }
        self.sched.pick_next_task(core)
    }

    fn schedule(&mut self, core: CoreId, now: Micros, why: Why) -> Result<()> {
        self.account(core, now)?;
        let prev = self.sched.core(core).curr;
        let next = self.pick(core, now)?;
        if let (Some(p), Some((n, _))) = (prev, next) {
            if p == n && self.sched.entity(p).is_running() {
                if matches!(why, Why::Tick | Why::Slice) {
                    self.sched.restart_slice(core);
                    if self.sched.entity(p).class == TaskClass::Rr {
                        self.arm_slice(core, now);
                    }
                }
                return Ok(());
            }
        }
        let reinsert = self.sched.put_prev_task(core, next.map(|n| n.0), now)?;
        if let Some(p) = prev {
            if self.sched.entity(p).on_rq {
                let ti = self.thread_idx(p)?;
                self.threads[ti].wait_since = Some(now);
            }
        }
        self.cores[core].gen += 1;
        self.cores[core].rr_gen += 1;
        match next {
            Some((n, descent)) => self.dispatch(core, n, reinsert + descent, now),
            None => {
                self.cores[core].cached_credit = f64::INFINITY;
                if why != Why::Balance && self.pull(core, now)? {
                    return self.schedule(core, now, Why::Balance);
                }
                Ok(())
            }
        }
    }

    fn dispatch(&mut self, core: CoreId, task: EntityId, levels: usize, now: Micros) -> Result<()> {
        self.sched.set_next_task(core, task, now)?;
        let cost = self.cfg.switch_cost.cost(levels);
        let c = &mut self.cores[core];
        c.cursor = c.cursor.max(now) + cost;
        c.cached_credit = self.sched.task_credit(task).unwrap_or(f64::INFINITY);
        self.m.overhead[core] += cost;
        self.m.switches += 1;
        self.m.switch_cost_total += cost;
        let ti = self.thread_idx(task)?;
        if let Some(ws) = self.threads[ti].wait_since.take() {
            self.m.rq_wait_total += now - ws;
        }
        for x in [now, core as u64, task.0 as u64] {
            self.m.digest = fnv(self.m.digest, x);
        }
        if self.opts.record_dispatches {
            self.log.push(Dispatch {
                time: now,
                core,
                function: self.threads[ti].function,
                task,
                levels,
            });
        }
        self.arm_completion(core)?;
        if self.sched.entity(task).class == TaskClass::Rr {
            self.arm_slice(core, now);
        }
        Ok(())
    }

    fn arm_completion(&mut self, core: CoreId) -> Result<()> {
        let task = self
            .sched
            .core(core)
            .curr
            .ok_or_else(|| Error::bookkeeping("arming completion on an idle core"))?;
        let ti = self.thread_idx(task)?;
        let remaining = self.threads[ti].unit.map_or(0, |u| u.remaining);
        let c = &mut self.cores[core];
        c.gen += 1;
        let (at, gen) = (c.cursor + remaining, c.gen);
        self.push(at, Kind::Completion { core, gen });
        Ok(())
    }

    /// Next quantum or budget boundary of the running real-time task.
    fn arm_slice(&mut self, core: CoreId, now: Micros) {
        let params = &self.cfg.policy_params;
        let used = self
            .sched
            .core(core)
            .curr
            .map_or(0, |t| self.sched.entity(t).exec_since_dispatch());
        let left = self.sched.rt_mut(core).remaining(now, params);
        let q = params.rr_quantum_us.saturating_sub(used).min(left).max(1);
        let c = &mut self.cores[core];
        c.rr_gen += 1;
        let (at, gen) = (c.cursor.max(now) + q, c.rr_gen);
        self.push(at, Kind::SliceExpiry { core, gen });
    }

    // ---- event handlers ----

    fn on_completion(&mut self, core: CoreId, now: Micros) -> Result<()> {
        self.account(core, now)?;
        let task = self
            .sched
            .core(core)
            .curr
            .ok_or_else(|| Error::bookkeeping(format!("completion on idle core {core}")))?;
        let ti = self.thread_idx(task)?;
        let unit = self.threads[ti]
            .unit
            .take()
            .ok_or_else(|| Error::bookkeeping(format!("{task} completed without work")))?;
        if unit.remaining != 0 {
            return Err(Error::bookkeeping(format!("{task} completed with {}us left", unit.remaining)));
        }
        self.finish_unit(unit.req, now);
        let f = self.threads[ti].function as usize;
        if let Some(u) = self.fns[f].pending.pop_front() {
            self.threads[ti].unit = Some(u);
            return self.arm_completion(core);
        }
        self.sched.dequeue_task(task, now)?;
        self.fns[f].idle.push(ti);
        self.schedule(core, now, Why::Block)
    }

    fn finish_unit(&mut self, req: usize, now: Micros) {
        let r = &mut self.reqs[req];
        r.workers_left -= 1;
        if r.workers_left > 0 {
            return;
        }
        let (arrival, f) = (r.arrival, r.function as usize);
        let latency = now - arrival;
        if arrival >= self.warmup {
            self.m.latency_samples.push(LatencySample {
                function: f as u32,
                arrival,
                latency,
                completed: true,
            });
        }
        if self.closed.is_some() {
            let st = &mut self.fns[f];
            if now < self.warmup {
                st.lat_sum += latency as f64;
                st.lat_n += 1;
            }
            st.inflight -= 1;
            if st.inflight < st.concurrency {
                st.inflight += 1;
                let at = now + self.think(f);
                self.push(at, Kind::Issue { function: f as u32 });
            }
        }
    }

    fn think(&mut self, f: usize) -> Micros {
        let mean = self.fns[f].think_mean;
        if mean <= 0.0 {
            return 0;
        }
        let gap = Exp::new(1.0 / mean).expect("positive mean").sample(&mut self.fns[f].rng);
        gap.round() as Micros
    }

    fn arrive(&mut self, f: usize, workers: u32, demand: Micros, now: Micros) -> Result<()> {
        let req = self.reqs.len();
        self.reqs.push(ReqState {
            arrival: now,
            function: f as u32,
            workers_left: workers,
        });
        for _ in 0..workers {
            self.fns[f].pending.push_back(Unit { req, remaining: demand });
        }
        while !self.fns[f].pending.is_empty() {
            let ti = match self.fns[f].idle.pop() {
                Some(t) => t,
                None if self.fns[f].nthreads < self.specs[f].max_threads => self.new_thread(f, now)?,
                None => break,
            };
            self.threads[ti].unit = self.fns[f].pending.pop_front();
            self.wake(ti, now)?;
        }
        Ok(())
    }

    fn new_thread(&mut self, f: usize, now: Micros) -> Result<usize> {
        let task = self
            .sched
            .add_task(self.fns[f].group, self.specs[f].class, NICE_0_WEIGHT, now)?;
        let ti = self.threads.len();
        self.threads.push(Thread {
            task,
            function: f as u32,
            unit: None,
            wait_since: None,
        });
        if self.thread_of.len() <= task.index() {
            self.thread_of.resize(task.index() + 1, NO_THREAD);
        }
        self.thread_of[task.index()] = ti as u32;
        self.fns[f].nthreads += 1;
        Ok(ti)
    }

    fn core_views(&self) -> Vec<CoreView> {
        (0..self.cfg.cores)
            .map(|c| CoreView {
                idle: self.sched.core(c).curr.is_none(),
                load: self.sched.nr_runnable(c),
                cached_credit: self.cores[c].cached_credit,
            })
            .collect()
    }

    fn wake(&mut self, ti: usize, now: Micros) -> Result<()> {
        let task = self.threads[ti].task;
        let credit = match self.policy {
            PolicyKind::Lags => self.sched.task_credit(task),
            _ => None,
        };
        let core = placement::select_core(self.policy, &self.core_views(), credit);
        self.account(core, now)?;
        self.sched.enqueue_task(task, core, now)?;
        self.threads[ti].wait_since = Some(now);
        if self.sched.core(core).curr.is_none() || self.sched.wakeup_preempts(core, task) {
            self.schedule(core, now, Why::Wake)?;
        }
        Ok(())
    }

    fn on_tick(&mut self, now: Micros) -> Result<()> {
        for c in 0..self.cfg.cores {
            if self.sched.core(c).curr.is_some() {
                self.account(c, now)?;
            }
        }
        self.tick_idx += 1;
        self.sched.update_load_credit(now, self.tick_idx)?;
        for c in 0..self.cfg.cores {
            if self.sched.tick_wants_resched(c) {
                self.schedule(c, now, Why::Tick)?;
            }
        }
        self.push(now + self.cfg.tick_us, Kind::Tick);
        Ok(())
    }

    fn on_slice_expiry(&mut self, core: CoreId, now: Micros) -> Result<()> {
        self.account(core, now)?;
        let Some(task) = self.sched.core(core).curr else {
            return Ok(());
        };
        if self.sched.entity(task).class != TaskClass::Rr {
            return Ok(());
        }
        if self.sched.rt_mut(core).is_throttled(now) {
            if !self.cores[core].unthrottle_armed {
                self.cores[core].unthrottle_armed = true;
                let at = self.sched.core(core).rt.window_end();
                self.push(at, Kind::Unthrottle { core });
            }
            return self.schedule(core, now, Why::Slice);
        }
        if self.sched.entity(task).exec_since_dispatch() >= self.cfg.policy_params.rr_quantum_us {
            self.sched.rt_mut(core).rotate(task);
            return self.schedule(core, now, Why::Slice);
        }
        self.arm_slice(core, now);
        Ok(())
    }

    /// Idle `dst` pulls one waiting task from the busiest core.
    fn pull(&mut self, dst: CoreId, now: Micros) -> Result<bool> {
        let loads: Vec<usize> = (0..self.cfg.cores).map(|c| self.sched.nr_runnable(c)).collect();
        let Some(src) = placement::find_busiest(&loads, dst, self.cfg.imbalance_threshold) else {
            return Ok(false);
        };
        let curr = self.sched.core(src).curr;
        let mut cands: Vec<EntityId> = self.sched.waiting_tasks(src);
        cands.extend(self.sched.core(src).rt.tasks().filter(|&t| Some(t) != curr));
        let with_credit: Vec<(EntityId, Option<f64>)> = cands
            .into_iter()
            .map(|t| (t, self.sched.task_credit(t)))
            .collect();
        let Some(task) = placement::pull_candidate(self.policy, &with_credit) else {
            return Ok(false);
        };
        self.account(src, now)?;
        self.sched.dequeue_task(task, now)?;
        self.account(dst, now)?;
        self.sched.enqueue_task(task, dst, now)?;
        self.m.migrations += 1;
        Ok(true)
    }

    fn on_balance(&mut self, now: Micros) -> Result<()> {
        for dst in 0..self.cfg.cores {
            if self.sched.core(dst).curr.is_none() && self.pull(dst, now)? {
                self.schedule(dst, now, Why::Balance)?;
            }
        }
        let any_idle = (0..self.cfg.cores).any(|c| self.sched.core(c).curr.is_none());
        let any_stacked = (0..self.cfg.cores).any(|c| self.sched.nr_runnable(c) >= 2);
        if any_idle && any_stacked {
            self.m.balance_violations += 1;
        }
        if self.opts.check_invariants {
            self.sched.check_invariants()?;
        }
        self.push(now + self.cfg.balance_interval_us, Kind::Balance);
        Ok(())
    }

    fn on_tune(&mut self, now: Micros) {
        let Some(c) = self.closed.clone() else {
            return;
        };
        for f in 0..self.fns.len() {
            let st = &mut self.fns[f];
            if st.lat_n == 0 || st.think_mean.is_infinite() {
                continue;
            }
            let mean = st.lat_sum / st.lat_n as f64;
            st.lat_sum = 0.0;
            st.lat_n = 0;
            if mean > c.target_latency_us as f64 {
                st.concurrency = (st.concurrency / 2).max(1);
            } else if st.concurrency < c.max_concurrency {
                st.concurrency += 1;
                st.inflight += 1;
                self.push(now, Kind::Issue { function: f as u32 });
            }
        }
        let next = now + c.adjust_interval_us;
        if next < self.warmup {
            self.push(next, Kind::Tune);
        }
    }

    fn finish(&mut self) -> Result<()> {
        let h = self.horizon();
        for c in 0..self.cfg.cores {
            self.account(c, h)?;
            // A switch still being paid for at the horizon is cut off there.
            let cursor = self.cores[c].cursor;
            if cursor > h {
                self.m.overhead[c] -= cursor - h;
                self.cores[c].cursor = h;
            }
        }
        for th in &self.threads {
            if let Some(ws) = th.wait_since {
                self.m.rq_wait_total += h - ws;
            }
        }
        for r in &self.reqs {
            if r.workers_left > 0 && r.arrival >= self.warmup {
                self.m.latency_samples.push(LatencySample {
                    function: r.function,
                    arrival: r.arrival,
                    latency: h - r.arrival,
                    completed: false,
                });
            }
        }
        self.m.completions_within_target = self
            .m
            .latency_samples
            .iter()
            .filter(|s| s.completed && s.latency <= DEFAULT_LATENCY_TARGET_US)
            .count() as u64;
        self.m.requests_issued = self.reqs.len() as u64;
        self.m.check_identity()
    }
}
