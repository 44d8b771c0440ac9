use crate::load::PeltState;
use crate::policy::TaskClass;
use crate::types::{CoreId, EntityId, GroupId, Micros, NICE_0_WEIGHT};

use super::rq::StoredKey;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntityKind {
    Task,
    /// The per-core representative of a task group inside its parent's queue.
    Group(GroupId),
}

#[derive(Clone, Debug)]
pub struct SchedEntity {
    pub id: EntityId,
    pub kind: EntityKind,
    pub class: TaskClass,
    pub weight: u32,
    pub vruntime: u64,
    /// Virtual-time lag saved at the last dequeue (EEVDF).
    pub lag: f64,
    pub vdeadline: u64,
    pub slice: Micros,
    pub sum_exec: Micros,
    /// `sum_exec` when the entity was last dispatched.
    pub prev_sum_exec: Micros,
    pub pelt: PeltState,
    pub on_rq: bool,
    /// Group owning the queue this entity is placed on.
    pub parent_group: GroupId,
    pub core: CoreId,
    pub(crate) running: bool,
    pub(crate) stored: Option<StoredKey>,
    pub(crate) slice_expired: bool,
}

impl SchedEntity {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        id: EntityId,
        kind: EntityKind,
        class: TaskClass,
        weight: u32,
        slice: Micros,
        parent_group: GroupId,
        core: CoreId,
        now: Micros,
    ) -> Self {
        SchedEntity {
            id,
            kind,
            class,
            weight,
            vruntime: 0,
            lag: 0.0,
            vdeadline: 0,
            slice,
            sum_exec: 0,
            prev_sum_exec: 0,
            pelt: PeltState::new(now),
            on_rq: false,
            parent_group,
            core,
            running: false,
            stored: None,
            slice_expired: false,
        }
    }

    pub fn is_task(&self) -> bool {
        self.kind == EntityKind::Task
    }

    pub fn is_running(&self) -> bool {
        self.running
    }

    /// Weight-scaled virtual time for `delta` of real execution.
    pub fn scale(&self, delta: Micros) -> u64 {
        delta * NICE_0_WEIGHT as u64 / self.weight as u64
    }

    pub fn vslice(&self) -> u64 {
        self.scale(self.slice)
    }

    /// Execution since the entity was last dispatched.
    pub fn exec_since_dispatch(&self) -> Micros {
        self.sum_exec - self.prev_sum_exec
    }
}
