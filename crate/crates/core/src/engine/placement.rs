//! Wakeup placement and idle-pull decisions, kept free of simulator state
//! so the decision tables can be checked directly.

use crate::policy::PolicyKind;
use crate::types::{CoreId, EntityId};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoreView {
    pub idle: bool,
    /// Runnable tasks on the core, running one included.
    pub load: usize,
    /// Load Credit of the running task's group as of its dispatch;
    /// infinite when idle or unflagged.
    pub cached_credit: f64,
}

/// Core for a waking task: the first idle core; under LAGS, otherwise the
/// first core running something with a higher Load Credit than the woken
/// task's group; otherwise the least loaded core (lowest id on ties).
pub fn select_core(policy: PolicyKind, cores: &[CoreView], woken_credit: Option<f64>) -> CoreId {
    if let Some(i) = cores.iter().position(|c| c.idle) {
        return i;
    }
    if let (PolicyKind::Lags, Some(w)) = (policy, woken_credit) {
        if let Some(i) = cores.iter().position(|c| c.cached_credit > w) {
            return i;
        }
    }
    least_loaded(cores)
}

fn least_loaded(cores: &[CoreView]) -> CoreId {
    let mut best = 0;
    for (i, c) in cores.iter().enumerate() {
        if c.load < cores[best].load {
            best = i;
        }
    }
    best
}

/// Busiest other core, if it has at least `threshold` more runnable tasks
/// than `dst`.
pub fn find_busiest(loads: &[usize], dst: CoreId, threshold: usize) -> Option<CoreId> {
    let mut best: Option<CoreId> = None;
    for (i, &l) in loads.iter().enumerate() {
        if i != dst && best.is_none_or(|b| l > loads[b]) {
            best = Some(i);
        }
    }
    best.filter(|&b| loads[b] >= loads[dst] + threshold)
}

/// Task to pull from the busiest core: under LAGS the one whose group has
/// the lowest Load Credit (unflagged counts as infinite), otherwise the
/// lowest id.
pub fn pull_candidate(policy: PolicyKind, candidates: &[(EntityId, Option<f64>)]) -> Option<EntityId> {
    let credit = |c: Option<f64>| match policy {
        PolicyKind::Lags => c.unwrap_or(f64::INFINITY),
        _ => 0.0,
    };
    candidates
        .iter()
        .min_by(|a, b| credit(a.1).total_cmp(&credit(b.1)).then(a.0.cmp(&b.0)))
        .map(|c| c.0)
}
