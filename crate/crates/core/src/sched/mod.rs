//! Hierarchical fair-class scheduler state for one node.
//!
//! Every task group owns one [`CfsRq`] per core and, except for the root, one
//! group entity per core that represents it inside the parent's queue on the
//! same core. Real-time tasks live on per-core [`RtRq`]s outside the tree.

mod entity;
mod rq;

use std::collections::HashMap;

pub use entity::{EntityKind, SchedEntity};
pub use rq::{CfsRq, StoredKey};

use crate::error::{Error, Result};
use crate::load::{CreditWindow, LoadCreditState, PeltState};
use crate::policy::{
    check_preempt_wakeup, ordering_key, FairRule, KeyInput, OrderingKey, Policy, PreemptView,
    RtRq, TaskClass,
};
use crate::types::{CoreId, EntityId, GroupId, Micros, NICE_0_WEIGHT};

#[derive(Clone, Debug)]
pub struct TaskGroup {
    pub id: GroupId,
    pub name: String,
    pub parent: Option<GroupId>,
    pub children: Vec<GroupId>,
    pub latency_awareness: bool,
    pub depth: u32,
    pub rqs: Vec<CfsRq>,
    /// Per-core group entity; empty for the root group.
    pub gse: Vec<EntityId>,
    /// Sum of the per-core group entity loads, refreshed every tick.
    pub load_avg: f64,
    pub credit: LoadCreditState,
    agg: PeltState,
    running_cores: u32,
}

#[derive(Clone, Debug, Default)]
pub struct CoreSched {
    /// Task whose chain is marked current on this core. Stays set after the
    /// task blocks until `put_prev_task` releases it.
    pub curr: Option<EntityId>,
    pub rt: RtRq,
}

/// One queue's contents, for comparing scheduler states.
#[derive(Clone, Debug, PartialEq)]
pub struct RqSnapshot {
    pub group: GroupId,
    pub entities: Vec<(EntityId, u64)>,
}

#[derive(Clone, Debug)]
pub struct Scheduler {
    pub policy: Policy,
    entities: Vec<SchedEntity>,
    groups: Vec<TaskGroup>,
    cores: Vec<CoreSched>,
    window: CreditWindow,
}

impl Scheduler {
    pub fn new(policy: Policy, ncores: usize, window: CreditWindow) -> Self {
        assert!(ncores > 0, "at least one core");
        let root = TaskGroup {
            id: GroupId::ROOT,
            name: "/".into(),
            parent: None,
            children: Vec::new(),
            latency_awareness: false,
            depth: 0,
            rqs: (0..ncores).map(|c| CfsRq::new(GroupId::ROOT, c)).collect(),
            gse: Vec::new(),
            load_avg: 0.0,
            credit: LoadCreditState::new(window),
            agg: PeltState::new(0),
            running_cores: 0,
        };
        Scheduler {
            policy,
            entities: Vec::new(),
            groups: vec![root],
            cores: vec![CoreSched::default(); ncores],
            window,
        }
    }

    pub fn ncores(&self) -> usize {
        self.cores.len()
    }

    pub fn entity(&self, id: EntityId) -> &SchedEntity {
        &self.entities[id.index()]
    }

    pub fn entities(&self) -> &[SchedEntity] {
        &self.entities
    }

    pub fn group(&self, g: GroupId) -> &TaskGroup {
        &self.groups[g.index()]
    }

    pub fn groups(&self) -> &[TaskGroup] {
        &self.groups
    }

    pub fn rq(&self, g: GroupId, core: CoreId) -> &CfsRq {
        &self.groups[g.index()].rqs[core]
    }

    pub fn core(&self, core: CoreId) -> &CoreSched {
        &self.cores[core]
    }

    pub fn rt_mut(&mut self, core: CoreId) -> &mut RtRq {
        &mut self.cores[core].rt
    }

    pub fn add_group(&mut self, parent: GroupId, name: &str, latency_awareness: bool) -> Result<GroupId> {
        if parent.index() >= self.groups.len() {
            return Err(Error::invalid("group.parent", format!("unknown group {parent}")));
        }
        let id = GroupId(self.groups.len() as u32);
        let depth = self.groups[parent.index()].depth + 1;
        let ncores = self.ncores();
        let mut gse = Vec::with_capacity(ncores);
        for core in 0..ncores {
            let eid = EntityId(self.entities.len() as u32);
            self.entities.push(SchedEntity::new(
                eid,
                EntityKind::Group(id),
                TaskClass::Fair,
                NICE_0_WEIGHT,
                self.policy.params.eevdf_base_slice_us,
                parent,
                core,
                0,
            ));
            gse.push(eid);
        }
        self.groups.push(TaskGroup {
            id,
            name: name.to_string(),
            parent: Some(parent),
            children: Vec::new(),
            latency_awareness,
            depth,
            rqs: (0..ncores).map(|c| CfsRq::new(id, c)).collect(),
            gse,
            load_avg: 0.0,
            credit: LoadCreditState::new(self.window),
            agg: PeltState::new(0),
            running_cores: 0,
        });
        self.groups[parent.index()].children.push(id);
        Ok(id)
    }

    pub fn add_task(&mut self, group: GroupId, class: TaskClass, weight: u32, now: Micros) -> Result<EntityId> {
        if group.index() >= self.groups.len() {
            return Err(Error::invalid("task.group", format!("unknown group {group}")));
        }
        if weight == 0 {
            return Err(Error::invalid("task.weight", "must be > 0"));
        }
        let id = EntityId(self.entities.len() as u32);
        self.entities.push(SchedEntity::new(
            id,
            EntityKind::Task,
            class,
            weight,
            self.policy.params.eevdf_base_slice_us,
            group,
            0,
            now,
        ));
        Ok(id)
    }

    /// Overrides a group's Load Credit.
    pub fn set_group_credit(&mut self, g: GroupId, value: f64) {
        self.groups[g.index()].credit.load_avg_ema = value;
    }

    pub fn set_task_slice(&mut self, task: EntityId, slice: Micros) {
        self.entities[task.index()].slice = slice.max(1);
    }

    pub fn set_task_class(&mut self, task: EntityId, class: TaskClass) -> Result<()> {
        let e = &mut self.entities[task.index()];
        if e.on_rq || e.running {
            return Err(Error::bookkeeping(format!("cannot change class of active {task}")));
        }
        e.class = class;
        Ok(())
    }

    // ---- hierarchy helpers ----

    fn ent(&self, id: EntityId) -> &SchedEntity {
        &self.entities[id.index()]
    }

    fn ent_mut(&mut self, id: EntityId) -> &mut SchedEntity {
        &mut self.entities[id.index()]
    }

    fn rq_of(&self, id: EntityId) -> &CfsRq {
        let e = self.ent(id);
        &self.groups[e.parent_group.index()].rqs[e.core]
    }

    fn rq_of_mut(&mut self, id: EntityId) -> &mut CfsRq {
        let (g, c) = {
            let e = self.ent(id);
            (e.parent_group, e.core)
        };
        &mut self.groups[g.index()].rqs[c]
    }

    /// Group entity one level up, on the same core.
    pub fn parent_entity(&self, id: EntityId) -> Option<EntityId> {
        let e = self.ent(id);
        self.groups[e.parent_group.index()].gse.get(e.core).copied()
    }

    /// The entity and its ancestors, bottom up.
    pub fn chain(&self, id: EntityId) -> Vec<EntityId> {
        let mut out = vec![id];
        let mut cur = id;
        while let Some(p) = self.parent_entity(cur) {
            out.push(p);
            cur = p;
        }
        out
    }

    /// Nearest latency-aware group at or above the task's own group.
    pub fn function_group(&self, task: EntityId) -> Option<GroupId> {
        let mut g = Some(self.ent(task).parent_group);
        while let Some(id) = g {
            let grp = &self.groups[id.index()];
            if grp.latency_awareness {
                return Some(id);
            }
            g = grp.parent;
        }
        None
    }

    /// Load Credit of the task's function group, if it has one.
    pub fn task_credit(&self, task: EntityId) -> Option<f64> {
        self.function_group(task)
            .map(|g| self.groups[g.index()].credit.value())
    }

    /// Credit used as the ordering key, if this entity is credit-keyed.
    fn entity_credit(&self, id: EntityId) -> Option<f64> {
        if self.policy.fair() != FairRule::Lags {
            return None;
        }
        match self.ent(id).kind {
            EntityKind::Group(g) if self.groups[g.index()].latency_awareness => {
                Some(self.groups[g.index()].credit.value())
            }
            _ => None,
        }
    }

    fn live_key(&self, id: EntityId, avg: f64) -> OrderingKey {
        let e = self.ent(id);
        ordering_key(
            &KeyInput {
                id,
                vruntime: e.vruntime,
                vdeadline: e.vdeadline,
                credit: self.entity_credit(id),
            },
            &self.policy,
            avg,
        )
    }

    fn curr_weighted(&self, rq: &CfsRq) -> Option<(u64, u32)> {
        rq.curr.map(|c| {
            let e = self.ent(c);
            (e.vruntime, e.weight)
        })
    }

    fn avg_vruntime_of(&self, rq: &CfsRq) -> f64 {
        rq.avg_vruntime(self.curr_weighted(rq))
            .unwrap_or(rq.min_vruntime as f64)
    }

    fn tree_insert(&mut self, id: EntityId) {
        let key = match self.entity_credit(id) {
            Some(c) => StoredKey::Credit(c),
            None => StoredKey::Vruntime(self.ent(id).vruntime),
        };
        let (v, w) = {
            let e = self.ent_mut(id);
            e.stored = Some(key);
            (e.vruntime, e.weight)
        };
        self.rq_of_mut(id).insert(id, key, v, w);
    }

    fn tree_remove(&mut self, id: EntityId) -> Result<()> {
        let (key, v, w) = {
            let e = self.ent_mut(id);
            let key = e
                .stored
                .take()
                .ok_or_else(|| Error::bookkeeping(format!("{id} is not in a tree")))?;
            (key, e.vruntime, e.weight)
        };
        if !self.rq_of_mut(id).remove(id, key, v, w) {
            return Err(Error::bookkeeping(format!("{id} missing from its queue")));
        }
        Ok(())
    }

    fn refresh_min_vruntime(&mut self, g: GroupId, core: CoreId) {
        let curr_v = self.groups[g.index()].rqs[core]
            .curr
            .map(|c| self.ent(c).vruntime);
        self.groups[g.index()].rqs[core].advance_min_vruntime(curr_v);
    }

    /// Starts or stops the execution signal feeding load tracking.
    fn set_running(&mut self, id: EntityId, running: bool, now: Micros) -> Result<()> {
        let e = &mut self.entities[id.index()];
        if e.running == running {
            return Ok(());
        }
        let level = if e.running { e.weight as f64 } else { 0.0 };
        e.pelt.accumulate(now, level)?;
        e.running = running;
        if let EntityKind::Group(g) = e.kind {
            let grp = &mut self.groups[g.index()];
            grp.agg
                .accumulate(now, NICE_0_WEIGHT as f64 * grp.running_cores as f64)?;
            if running {
                grp.running_cores += 1;
            } else {
                grp.running_cores -= 1;
            }
        }
        Ok(())
    }

    // ---- accounting ----

    /// Charges `delta` of execution to the current task on `core` and to
    /// every ancestor group entity.
    pub fn update_curr(&mut self, core: CoreId, delta: Micros) -> Result<()> {
        if delta == 0 {
            return Err(Error::bookkeeping("update_curr with zero delta"));
        }
        let task = self.cores[core]
            .curr
            .filter(|&t| self.ent(t).running)
            .ok_or_else(|| Error::bookkeeping(format!("no running task on core {core}")))?;
        if self.ent(task).class == TaskClass::Rr {
            self.ent_mut(task).sum_exec += delta;
            return Ok(());
        }
        let eevdf = self.policy.fair() == FairRule::Eevdf;
        let infinite = self.window == CreditWindow::Infinite;
        let mut se = Some(task);
        while let Some(id) = se {
            let e = self.ent_mut(id);
            e.sum_exec += delta;
            e.vruntime += e.scale(delta);
            if eevdf && e.vruntime >= e.vdeadline {
                e.vdeadline = e.vruntime + e.vslice();
                e.slice_expired = true;
            }
            let (g, kind) = (e.parent_group, e.kind);
            self.refresh_min_vruntime(g, core);
            if let (true, EntityKind::Group(own)) = (infinite, kind) {
                if self.groups[own.index()].latency_awareness {
                    self.groups[own.index()].credit.record_service(delta);
                }
            }
            se = self.parent_entity(id);
        }
        Ok(())
    }

    // ---- enqueue / dequeue ----

    fn place_entity(&mut self, id: EntityId) {
        let rq = self.rq_of(id);
        let e = self.ent(id);
        let new_v = match self.policy.fair() {
            FairRule::Eevdf => {
                let avg = self.avg_vruntime_of(rq);
                let total_w = rq.avg_vruntime(self.curr_weighted(rq)).map(|_| {
                    let mut w: u64 = rq
                        .iter_by_vruntime()
                        .map(|(_, q)| self.ent(q).weight as u64)
                        .sum();
                    if let Some((_, cw)) = self.curr_weighted(rq) {
                        w += cw as u64;
                    }
                    w
                });
                let limit = e.scale((2 * e.slice).max(4_000)) as f64;
                let mut lag = e.lag.clamp(-limit, limit);
                if let Some(w) = total_w.filter(|&w| w > 0) {
                    lag = lag * (w + e.weight as u64) as f64 / w as f64;
                }
                let target = (avg - lag).round().max(0.0) as u64;
                e.vruntime.max(target)
            }
            _ => {
                let period = self.policy.params.sched_period(rq.nr_running + 1);
                if e.vruntime.saturating_add(period) < rq.min_vruntime {
                    rq.min_vruntime - period / 2
                } else {
                    e.vruntime
                }
            }
        };
        let eevdf = self.policy.fair() == FairRule::Eevdf;
        let e = self.ent_mut(id);
        e.vruntime = new_v;
        if eevdf {
            e.vdeadline = new_v + e.vslice();
            e.slice_expired = false;
        }
    }

    fn enqueue_entity(&mut self, id: EntityId) {
        self.place_entity(id);
        self.tree_insert(id);
        self.ent_mut(id).on_rq = true;
        let (g, core) = (self.ent(id).parent_group, self.ent(id).core);
        self.groups[g.index()].rqs[core].nr_running += 1;
        self.refresh_min_vruntime(g, core);
    }

    fn dequeue_entity(&mut self, id: EntityId, now: Micros) -> Result<()> {
        let (g, core) = (self.ent(id).parent_group, self.ent(id).core);
        if self.policy.fair() == FairRule::Eevdf {
            let avg = self.avg_vruntime_of(self.rq_of(id));
            let e = self.ent_mut(id);
            e.lag = avg - e.vruntime as f64;
        }
        if self.groups[g.index()].rqs[core].curr == Some(id) {
            self.groups[g.index()].rqs[core].curr = None;
            self.set_running(id, false, now)?;
        } else {
            self.tree_remove(id)?;
        }
        self.ent_mut(id).on_rq = false;
        self.groups[g.index()].rqs[core].nr_running -= 1;
        self.refresh_min_vruntime(g, core);
        Ok(())
    }

    /// Makes `task` runnable on `core`, enqueueing ancestors as needed.
    pub fn enqueue_task(&mut self, task: EntityId, core: CoreId, _now: Micros) -> Result<()> {
        if !self.ent(task).is_task() {
            return Err(Error::bookkeeping(format!("{task} is not a task")));
        }
        if self.ent(task).on_rq {
            return Err(Error::bookkeeping(format!("double enqueue of {task}")));
        }
        if core >= self.ncores() {
            return Err(Error::bookkeeping(format!("core {core} out of range")));
        }
        self.ent_mut(task).core = core;
        if self.ent(task).class == TaskClass::Rr {
            self.cores[core].rt.enqueue(task);
            self.ent_mut(task).on_rq = true;
            return Ok(());
        }
        let chain = self.chain(task);
        for &se in &chain {
            if self.ent(se).on_rq {
                break;
            }
            self.enqueue_entity(se);
        }
        for &se in &chain {
            self.rq_of_mut(se).h_nr_running += 1;
        }
        Ok(())
    }

    /// Removes `task` from its queue; emptied ancestor groups leave too.
    pub fn dequeue_task(&mut self, task: EntityId, now: Micros) -> Result<()> {
        if !self.ent(task).on_rq {
            return Err(Error::bookkeeping(format!("dequeue of idle {task}")));
        }
        let core = self.ent(task).core;
        if self.ent(task).class == TaskClass::Rr {
            self.cores[core].rt.remove(task);
            self.ent_mut(task).on_rq = false;
            return self.set_running(task, false, now);
        }
        let chain = self.chain(task);
        for &se in &chain {
            self.rq_of_mut(se).h_nr_running -= 1;
        }
        for &se in &chain {
            self.dequeue_entity(se, now)?;
            if self.rq_of(se).nr_running > 0 {
                break;
            }
        }
        Ok(())
    }

    // ---- pick / put / set ----

    fn pick_entity(&self, rq: &CfsRq) -> Option<EntityId> {
        if self.policy.fair() == FairRule::Eevdf {
            return self.pick_eevdf(rq);
        }
        let tree = match (rq.first_credit(), rq.first_plain()) {
            (Some(c), Some(p)) => {
                if self.live_key(c, 0.0).precedes(&self.live_key(p, 0.0)) {
                    Some(c)
                } else {
                    Some(p)
                }
            }
            (c, p) => c.or(p),
        };
        match (rq.curr, tree) {
            (Some(c), Some(t)) => {
                if self.live_key(c, 0.0).precedes(&self.live_key(t, 0.0)) {
                    Some(c)
                } else {
                    Some(t)
                }
            }
            (c, t) => c.or(t),
        }
    }

    fn pick_eevdf(&self, rq: &CfsRq) -> Option<EntityId> {
        let avg = rq.avg_vruntime(self.curr_weighted(rq))?;
        let mut best: Option<OrderingKey> = None;
        let mut consider = |k: OrderingKey| {
            if best.is_none_or(|b| k.precedes(&b)) {
                best = Some(k);
            }
        };
        if let Some(c) = rq.curr {
            consider(self.live_key(c, avg));
        }
        for (v, id) in rq.iter_by_vruntime() {
            if v as f64 > avg {
                // Remaining entities are ineligible; only the first of them
                // can matter, and only when nothing is eligible.
                consider(self.live_key(id, avg));
                break;
            }
            consider(self.live_key(id, avg));
        }
        best.map(|k| k.id)
    }

    /// Task that would run next on `core`, with the number of group levels
    /// descended to reach it. Does not modify any queue.
    pub fn pick_next_task(&self, core: CoreId) -> Result<Option<(EntityId, usize)>> {
        let mut g = GroupId::ROOT;
        let mut levels = 0;
        loop {
            let rq = &self.groups[g.index()].rqs[core];
            let Some(se) = self.pick_entity(rq) else {
                if g == GroupId::ROOT {
                    return Ok(None);
                }
                return Err(Error::bookkeeping(format!(
                    "group {g} queued on core {core} with an empty queue"
                )));
            };
            match self.ent(se).kind {
                EntityKind::Task => return Ok(Some((se, levels))),
                EntityKind::Group(child) => {
                    g = child;
                    levels += 1;
                }
            }
        }
    }

    /// Releases the current chain on `core` up to the level it shares with
    /// `next`, returning how many still-runnable entities were reinserted.
    pub fn put_prev_task(&mut self, core: CoreId, next: Option<EntityId>, now: Micros) -> Result<usize> {
        let Some(prev) = self.cores[core].curr.take() else {
            return Ok(0);
        };
        if self.ent(prev).class == TaskClass::Rr {
            self.set_running(prev, false, now)?;
            return Ok(0);
        }
        let next_at: HashMap<GroupId, EntityId> = match next {
            Some(n) if self.ent(n).class == TaskClass::Fair && self.ent(n).core == core => self
                .chain(n)
                .into_iter()
                .map(|se| (self.ent(se).parent_group, se))
                .collect(),
            _ => HashMap::new(),
        };
        let mut count = 0;
        let mut se = Some(prev);
        while let Some(id) = se {
            let g = self.ent(id).parent_group;
            let sibling = next_at.get(&g).copied();
            if sibling == Some(id) {
                break;
            }
            if self.groups[g.index()].rqs[core].curr == Some(id) {
                self.groups[g.index()].rqs[core].curr = None;
            }
            self.set_running(id, false, now)?;
            if self.ent(id).on_rq {
                self.tree_insert(id);
                count += 1;
            }
            if sibling.is_some() {
                break;
            }
            se = self.parent_entity(id);
        }
        Ok(count)
    }

    /// Marks `next` and its ancestors current on `core`.
    pub fn set_next_task(&mut self, core: CoreId, next: EntityId, now: Micros) -> Result<()> {
        if self.cores[core].curr.is_some() {
            return Err(Error::bookkeeping(format!("core {core} still has a current task")));
        }
        if !self.ent(next).on_rq || self.ent(next).core != core {
            return Err(Error::bookkeeping(format!("{next} is not queued on core {core}")));
        }
        if self.ent(next).class == TaskClass::Rr {
            let e = self.ent_mut(next);
            e.prev_sum_exec = e.sum_exec;
            self.set_running(next, true, now)?;
            self.cores[core].curr = Some(next);
            return Ok(());
        }
        let mut se = Some(next);
        while let Some(id) = se {
            let g = self.ent(id).parent_group;
            match self.groups[g.index()].rqs[core].curr {
                Some(c) if c == id => break,
                Some(c) => {
                    return Err(Error::bookkeeping(format!(
                        "queue {g} on core {core} already runs {c}"
                    )))
                }
                None => {}
            }
            self.tree_remove(id)?;
            self.groups[g.index()].rqs[core].curr = Some(id);
            let e = self.ent_mut(id);
            e.prev_sum_exec = e.sum_exec;
            self.set_running(id, true, now)?;
            se = self.parent_entity(id);
        }
        self.ent_mut(next).slice_expired = false;
        self.cores[core].curr = Some(next);
        Ok(())
    }

    /// Restarts the current task's share after it was re-picked.
    pub fn restart_slice(&mut self, core: CoreId) {
        if let Some(t) = self.cores[core].curr {
            let e = self.ent_mut(t);
            e.prev_sum_exec = e.sum_exec;
        }
    }

    // ---- preemption ----

    fn preempt_view(&self, id: EntityId) -> PreemptView {
        let e = self.ent(id);
        if e.class == TaskClass::Rr {
            return PreemptView::rr();
        }
        let avg = self.avg_vruntime_of(self.rq_of(id));
        PreemptView {
            class: TaskClass::Fair,
            vruntime: e.vruntime,
            vdeadline: e.vdeadline,
            eligible: e.vruntime as f64 <= avg,
            credit: self.entity_credit(id),
        }
    }

    /// Walks both entities up until they share a queue.
    pub fn find_matching(&self, a: EntityId, b: EntityId) -> (EntityId, EntityId) {
        let (mut a, mut b) = (a, b);
        let depth = |s: &Self, x: EntityId| s.groups[s.ent(x).parent_group.index()].depth;
        while self.ent(a).parent_group != self.ent(b).parent_group {
            let (da, db) = (depth(self, a), depth(self, b));
            if da >= db {
                a = self.parent_entity(a).expect("non-root entity has a parent");
            }
            if db >= da {
                b = self.parent_entity(b).expect("non-root entity has a parent");
            }
        }
        (a, b)
    }

    /// Whether `woken`, just enqueued on `core`, should preempt the running
    /// task. False when nothing runs on `core`.
    pub fn wakeup_preempts(&self, core: CoreId, woken: EntityId) -> bool {
        let Some(curr) = self.cores[core].curr.filter(|&c| self.ent(c).running) else {
            return false;
        };
        let (c, w) = match (self.ent(curr).class, self.ent(woken).class) {
            (TaskClass::Fair, TaskClass::Fair) => self.find_matching(curr, woken),
            _ => (curr, woken),
        };
        check_preempt_wakeup(&self.preempt_view(c), &self.preempt_view(w), &self.policy)
    }

    /// Tick-driven check: has the running fair task used up its share?
    pub fn tick_wants_resched(&mut self, core: CoreId) -> bool {
        let Some(task) = self.cores[core].curr.filter(|&c| self.ent(c).running) else {
            return false;
        };
        if self.ent(task).class == TaskClass::Rr {
            return false;
        }
        let nr = self.groups[0].rqs[core].h_nr_running;
        match self.policy.fair() {
            FairRule::Eevdf => {
                let mut expired = false;
                for se in self.chain(task) {
                    let e = self.ent_mut(se);
                    expired |= e.slice_expired;
                    e.slice_expired = false;
                }
                expired && nr >= 2
            }
            _ => nr >= 2 && self.ent(task).exec_since_dispatch() >= self.policy.params.sched_share(nr),
        }
    }

    // ---- load tracking ----

    /// Brings every group's aggregate load up to `now` and advances the
    /// Load Credit of latency-aware groups by one tick.
    pub fn update_load_credit(&mut self, now: Micros, tick: u64) -> Result<()> {
        for grp in self.groups.iter_mut().skip(1) {
            grp.agg
                .accumulate(now, NICE_0_WEIGHT as f64 * grp.running_cores as f64)?;
            grp.load_avg = grp.agg.load_avg;
            if grp.latency_awareness {
                grp.credit.update(grp.load_avg, tick);
            }
        }
        Ok(())
    }

    /// Brings every entity's own load signal up to `now`.
    pub fn sync_entity_loads(&mut self, now: Micros) -> Result<()> {
        for e in &mut self.entities {
            let level = if e.running { e.weight as f64 } else { 0.0 };
            e.pelt.accumulate(now, level)?;
        }
        Ok(())
    }

    // ---- inspection ----

    /// Runnable fair tasks on `core` (queued or running).
    pub fn fair_runnable(&self, core: CoreId) -> usize {
        self.groups[0].rqs[core].h_nr_running
    }

    /// All runnable tasks on `core`, both classes.
    pub fn nr_runnable(&self, core: CoreId) -> usize {
        self.fair_runnable(core) + self.cores[core].rt.len()
    }

    /// Queued fair tasks on `core` that are not currently running.
    pub fn waiting_tasks(&self, core: CoreId) -> Vec<EntityId> {
        let mut out = Vec::new();
        let mut stack = vec![GroupId::ROOT];
        while let Some(g) = stack.pop() {
            let rq = &self.groups[g.index()].rqs[core];
            let members = rq.iter_by_vruntime().map(|(_, id)| id).chain(rq.curr);
            for id in members {
                match self.ent(id).kind {
                    EntityKind::Task if !self.ent(id).running => out.push(id),
                    EntityKind::Task => {}
                    EntityKind::Group(child) => stack.push(child),
                }
            }
        }
        out.sort();
        out
    }

    /// EEVDF lag (`V - v`, virtual µs) of each entity on one queue.
    pub fn lags(&self, g: GroupId, core: CoreId) -> Vec<(EntityId, f64)> {
        let rq = &self.groups[g.index()].rqs[core];
        let avg = self.avg_vruntime_of(rq);
        rq.iter_by_vruntime()
            .map(|(_, id)| id)
            .chain(rq.curr)
            .map(|id| (id, avg - self.ent(id).vruntime as f64))
            .collect()
    }

    /// Contents of every non-empty queue on `core`, counting `curr` as queued.
    pub fn snapshot(&self, core: CoreId) -> Vec<RqSnapshot> {
        let mut out = Vec::new();
        for grp in &self.groups {
            let rq = &grp.rqs[core];
            let mut entities: Vec<(EntityId, u64)> = rq
                .iter_by_vruntime()
                .map(|(_, id)| id)
                .chain(rq.curr)
                .map(|id| (id, self.ent(id).vruntime))
                .collect();
            if entities.is_empty() {
                continue;
            }
            entities.sort();
            out.push(RqSnapshot {
                group: grp.id,
                entities,
            });
        }
        out
    }

    /// Structural checks on the whole hierarchy.
    pub fn check_invariants(&self) -> Result<()> {
        for grp in &self.groups {
            for (core, rq) in grp.rqs.iter().enumerate() {
                let curr_on = rq.curr.map_or(0, |c| usize::from(self.ent(c).on_rq));
                if rq.nr_running != rq.queued() + curr_on {
                    return Err(Error::bookkeeping(format!(
                        "{} core {core}: nr_running {} != {} queued + {curr_on}",
                        grp.id,
                        rq.nr_running,
                        rq.queued()
                    )));
                }
                if let Some(&gse) = grp.gse.get(core) {
                    if self.ent(gse).on_rq != (rq.nr_running > 0) {
                        return Err(Error::bookkeeping(format!(
                            "{} core {core}: group entity on_rq={} with {} children",
                            grp.id,
                            self.ent(gse).on_rq,
                            rq.nr_running
                        )));
                    }
                }
                let mut h = 0;
                for id in rq.iter_by_vruntime().map(|(_, id)| id).chain(rq.curr) {
                    let e = self.ent(id);
                    if e.core != core || e.parent_group != grp.id || !e.on_rq {
                        return Err(Error::bookkeeping(format!("{id} misplaced in {}", grp.id)));
                    }
                    h += match e.kind {
                        EntityKind::Task => 1,
                        EntityKind::Group(c) => self.groups[c.index()].rqs[core].h_nr_running,
                    };
                }
                if h != rq.h_nr_running {
                    return Err(Error::bookkeeping(format!(
                        "{} core {core}: h_nr_running {} != {h}",
                        grp.id, rq.h_nr_running
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
