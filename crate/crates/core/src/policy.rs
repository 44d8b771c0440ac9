//! Ordering keys, wakeup preemption and the round-robin real-time class.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EntityId, Micros, MICROS_PER_SEC};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Cfs,
    Eevdf,
    /// Tasks marked real-time run round-robin; everything else is CFS.
    Rr,
    Lags,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Cfs => "cfs",
            PolicyKind::Eevdf => "eevdf",
            PolicyKind::Rr => "rr",
            PolicyKind::Lags => "lags",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cfs" => Ok(PolicyKind::Cfs),
            "eevdf" => Ok(PolicyKind::Eevdf),
            "rr" | "lags-static" => Ok(PolicyKind::Rr),
            "lags" => Ok(PolicyKind::Lags),
            other => Err(Error::invalid("policy", format!("unknown policy `{other}`"))),
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyParams {
    pub rr_quantum_us: Micros,
    /// Fraction of every one-second window the real-time class may use.
    pub rr_bandwidth_cap: f64,
    pub wakeup_granularity_us: Micros,
    pub eevdf_base_slice_us: Micros,
    pub sched_latency_us: Micros,
    pub min_granularity_us: Micros,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams {
            rr_quantum_us: 100_000,
            rr_bandwidth_cap: 0.95,
            wakeup_granularity_us: 1_000,
            eevdf_base_slice_us: 3_000,
            sched_latency_us: 6_000,
            min_granularity_us: 750,
        }
    }
}

impl PolicyParams {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let field = |name: &str| format!("{prefix}{name}");
        if !(self.rr_bandwidth_cap > 0.0 && self.rr_bandwidth_cap <= 1.0) {
            return Err(Error::invalid(
                field("rr_bandwidth_cap"),
                format!("{} not in (0, 1]", self.rr_bandwidth_cap),
            ));
        }
        if self.rr_quantum_us == 0 {
            return Err(Error::invalid(field("rr_quantum_us"), "must be > 0"));
        }
        if self.eevdf_base_slice_us == 0 {
            return Err(Error::invalid(field("eevdf_base_slice_us"), "must be > 0"));
        }
        if self.min_granularity_us == 0 || self.sched_latency_us == 0 {
            return Err(Error::invalid(
                field("sched_latency_us"),
                "latency and min granularity must be > 0",
            ));
        }
        Ok(())
    }

    /// `max(sched_latency, nr_running * min_granularity)`.
    pub fn sched_period(&self, nr_running: usize) -> Micros {
        self.sched_latency_us
            .max(nr_running as Micros * self.min_granularity_us)
    }

    /// Each task's share of the period when `nr_running` tasks compete.
    pub fn sched_share(&self, nr_running: usize) -> Micros {
        self.sched_period(nr_running) / nr_running.max(1) as Micros
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub kind: PolicyKind,
    pub params: PolicyParams,
}

impl Policy {
    pub fn new(kind: PolicyKind) -> Self {
        Policy {
            kind,
            params: PolicyParams::default(),
        }
    }

    pub fn with_params(kind: PolicyKind, params: PolicyParams) -> Self {
        Policy { kind, params }
    }

    /// Rules applied to fair-class entities. Under the RR policy the
    /// remaining fair tasks are plain CFS.
    pub fn fair(&self) -> FairRule {
        match self.kind {
            PolicyKind::Cfs | PolicyKind::Rr => FairRule::Cfs,
            PolicyKind::Eevdf => FairRule::Eevdf,
            PolicyKind::Lags => FairRule::Lags,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FairRule {
    Cfs,
    Eevdf,
    Lags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskClass {
    Fair,
    Rr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KeyTier {
    Vruntime,
    Credit,
    Eligible,
    Ineligible,
}

/// Sort key of an entity within its run queue.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrderingKey {
    pub tier: KeyTier,
    pub primary: f64,
    pub vruntime: u64,
    pub id: EntityId,
}

impl OrderingKey {
    /// Strict "runs before". Two credit-keyed entities compare by credit;
    /// any other pairing among fair entities falls back to vruntime. EEVDF
    /// keys order eligible entities by deadline ahead of ineligible ones,
    /// which order by eligibility time.
    pub fn precedes(&self, other: &OrderingKey) -> bool {
        use KeyTier::*;
        let by_primary = || (self.primary, self.id) < (other.primary, other.id);
        match (self.tier, other.tier) {
            (Credit, Credit) => by_primary(),
            (Eligible, Ineligible) => true,
            (Ineligible, Eligible) => false,
            (Eligible, Eligible) | (Ineligible, Ineligible) => by_primary(),
            _ => (self.vruntime, self.id) < (other.vruntime, other.id),
        }
    }
}

/// The per-entity values ordering depends on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeyInput {
    pub id: EntityId,
    pub vruntime: u64,
    pub vdeadline: u64,
    /// Load Credit of the entity's own task group, when that group is a
    /// flagged function sandbox.
    pub credit: Option<f64>,
}

/// `avg_vruntime` is the weighted average vruntime of the queue the entity
/// belongs to; only EEVDF consults it.
pub fn ordering_key(e: &KeyInput, policy: &Policy, avg_vruntime: f64) -> OrderingKey {
    let (tier, primary) = match policy.fair() {
        FairRule::Cfs => (KeyTier::Vruntime, e.vruntime as f64),
        FairRule::Lags => match e.credit {
            Some(c) => (KeyTier::Credit, c),
            None => (KeyTier::Vruntime, e.vruntime as f64),
        },
        FairRule::Eevdf => {
            if e.vruntime as f64 <= avg_vruntime {
                (KeyTier::Eligible, e.vdeadline as f64)
            } else {
                (KeyTier::Ineligible, e.vruntime as f64)
            }
        }
    };
    OrderingKey {
        tier,
        primary,
        vruntime: e.vruntime,
        id: e.id,
    }
}

/// What wakeup preemption needs to know about one side of the comparison.
/// For fair tasks these are the values of the pair of entities that share a
/// run queue (the children of the two tasks' lowest common ancestor).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreemptView {
    pub class: TaskClass,
    pub vruntime: u64,
    pub vdeadline: u64,
    pub eligible: bool,
    pub credit: Option<f64>,
}

impl PreemptView {
    pub fn fair(vruntime: u64) -> Self {
        PreemptView {
            class: TaskClass::Fair,
            vruntime,
            vdeadline: 0,
            eligible: true,
            credit: None,
        }
    }

    pub fn rr() -> Self {
        PreemptView {
            class: TaskClass::Rr,
            ..PreemptView::fair(0)
        }
    }
}

pub fn check_preempt_wakeup(curr: &PreemptView, woken: &PreemptView, policy: &Policy) -> bool {
    match (curr.class, woken.class) {
        (TaskClass::Fair, TaskClass::Rr) => return true,
        (TaskClass::Rr, _) => return false,
        (TaskClass::Fair, TaskClass::Fair) => {}
    }
    let gran = policy.params.wakeup_granularity_us;
    match policy.fair() {
        FairRule::Lags if curr.credit.is_some() && woken.credit.is_some() => {
            woken.credit.unwrap() < curr.credit.unwrap()
        }
        FairRule::Eevdf => woken.eligible && curr.vdeadline > woken.vdeadline.saturating_add(gran),
        _ => curr.vruntime > woken.vruntime.saturating_add(gran),
    }
}

/// Per-core round-robin real-time queue with bandwidth throttling over
/// fixed one-second windows.
#[derive(Clone, Debug, Default)]
pub struct RtRq {
    queue: VecDeque<EntityId>,
    window_start: Micros,
    used: Micros,
    throttled: bool,
}

pub const RT_PERIOD_US: Micros = MICROS_PER_SEC;

impl RtRq {
    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn contains(&self, task: EntityId) -> bool {
        self.queue.contains(&task)
    }

    pub fn tasks(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.queue.iter().copied()
    }

    pub fn enqueue(&mut self, task: EntityId) {
        debug_assert!(!self.queue.contains(&task));
        self.queue.push_back(task);
    }

    pub fn remove(&mut self, task: EntityId) -> bool {
        match self.queue.iter().position(|&t| t == task) {
            Some(i) => {
                self.queue.remove(i);
                true
            }
            None => false,
        }
    }

    /// Moves `task` behind its peers once its quantum is used up.
    pub fn rotate(&mut self, task: EntityId) {
        if self.remove(task) {
            self.queue.push_back(task);
        }
    }

    pub fn budget(params: &PolicyParams) -> Micros {
        (params.rr_bandwidth_cap * RT_PERIOD_US as f64).round() as Micros
    }

    fn roll_window(&mut self, now: Micros) {
        if now >= self.window_start + RT_PERIOD_US {
            self.window_start = now - now % RT_PERIOD_US;
            self.used = 0;
            self.throttled = false;
        }
    }

    pub fn window_end(&self) -> Micros {
        self.window_start + RT_PERIOD_US
    }

    pub fn is_throttled(&mut self, now: Micros) -> bool {
        self.roll_window(now);
        self.throttled
    }

    /// Charges real-time execution that happened up to `now`.
    pub fn charge(&mut self, now: Micros, delta: Micros, params: &PolicyParams) {
        self.roll_window(now);
        self.used += delta;
        if self.used >= Self::budget(params) {
            self.throttled = true;
        }
    }

    /// Budget left in the current window.
    pub fn remaining(&mut self, now: Micros, params: &PolicyParams) -> Micros {
        self.roll_window(now);
        Self::budget(params).saturating_sub(self.used)
    }

    /// Next real-time task to run, or `None` if the queue is empty or the
    /// class has exhausted its share of the current window.
    pub fn schedule(&mut self, now: Micros) -> Option<EntityId> {
        self.roll_window(now);
        if self.throttled {
            return None;
        }
        self.queue.front().copied()
    }
}
