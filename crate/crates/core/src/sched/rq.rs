use std::collections::BTreeSet;

use crate::types::{CoreId, EntityId, GroupId};

/// Key an entity was inserted with. Positions are fixed at insert time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StoredKey {
    Vruntime(u64),
    Credit(f64),
}

/// Order-preserving map of an `f64` onto `u64`.
fn ordered_bits(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

/// One run queue: the queued children of a task group on one core.
///
/// The running entity (`curr`) is kept out of the trees but counted in
/// `nr_running`. Credit-keyed entities sit in their own lane; `all` indexes
/// every queued entity by vruntime for `min_vruntime` and EEVDF eligibility.
#[derive(Clone, Debug)]
pub struct CfsRq {
    pub group: GroupId,
    pub core: CoreId,
    all: BTreeSet<(u64, EntityId)>,
    plain: BTreeSet<(u64, EntityId)>,
    credit: BTreeSet<(u64, EntityId)>,
    pub curr: Option<EntityId>,
    pub min_vruntime: u64,
    pub nr_running: usize,
    pub h_nr_running: usize,
    sum_w: u64,
    sum_wv: i128,
}

impl CfsRq {
    pub fn new(group: GroupId, core: CoreId) -> Self {
        CfsRq {
            group,
            core,
            all: BTreeSet::new(),
            plain: BTreeSet::new(),
            credit: BTreeSet::new(),
            curr: None,
            min_vruntime: 0,
            nr_running: 0,
            h_nr_running: 0,
            sum_w: 0,
            sum_wv: 0,
        }
    }

    pub(crate) fn insert(&mut self, id: EntityId, key: StoredKey, vruntime: u64, weight: u32) {
        self.all.insert((vruntime, id));
        match key {
            StoredKey::Vruntime(v) => self.plain.insert((v, id)),
            StoredKey::Credit(c) => self.credit.insert((ordered_bits(c), id)),
        };
        self.sum_w += weight as u64;
        self.sum_wv += weight as i128 * vruntime as i128;
    }

    pub(crate) fn remove(&mut self, id: EntityId, key: StoredKey, vruntime: u64, weight: u32) -> bool {
        let found = self.all.remove(&(vruntime, id));
        let lane = match key {
            StoredKey::Vruntime(v) => self.plain.remove(&(v, id)),
            StoredKey::Credit(c) => self.credit.remove(&(ordered_bits(c), id)),
        };
        if found {
            self.sum_w -= weight as u64;
            self.sum_wv -= weight as i128 * vruntime as i128;
        }
        found && lane
    }

    /// Number of queued entities excluding `curr`.
    pub fn queued(&self) -> usize {
        self.all.len()
    }

    pub fn first_plain(&self) -> Option<EntityId> {
        self.plain.first().map(|&(_, id)| id)
    }

    pub fn first_credit(&self) -> Option<EntityId> {
        self.credit.first().map(|&(_, id)| id)
    }

    pub fn first_by_vruntime(&self) -> Option<(u64, EntityId)> {
        self.all.first().copied()
    }

    /// Queued entities (excluding `curr`) in ascending vruntime order.
    pub fn iter_by_vruntime(&self) -> impl Iterator<Item = (u64, EntityId)> + '_ {
        self.all.iter().copied()
    }

    /// Vruntime lane in stored order.
    pub fn iter_plain(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.plain.iter().map(|&(_, id)| id)
    }

    /// Credit lane in stored order.
    pub fn iter_credit(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.credit.iter().map(|&(_, id)| id)
    }

    /// Weighted mean vruntime over queued entities plus `curr` if given.
    pub fn avg_vruntime(&self, curr: Option<(u64, u32)>) -> Option<f64> {
        let (mut w, mut wv) = (self.sum_w, self.sum_wv);
        if let Some((v, cw)) = curr {
            w += cw as u64;
            wv += cw as i128 * v as i128;
        }
        (w > 0).then(|| wv as f64 / w as f64)
    }

    pub(crate) fn advance_min_vruntime(&mut self, curr_vruntime: Option<u64>) {
        let left = self.all.first().map(|&(v, _)| v);
        let candidate = match (curr_vruntime, left) {
            (Some(c), Some(l)) => Some(c.min(l)),
            (c, l) => c.or(l),
        };
        if let Some(v) = candidate {
            self.min_vruntime = self.min_vruntime.max(v);
        }
    }
}
