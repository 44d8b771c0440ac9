use super::*;
use crate::policy::PolicyKind;

fn sched(kind: PolicyKind, cores: usize) -> Scheduler {
    Scheduler::new(Policy::new(kind), cores, CreditWindow::Ticks(1000))
}

fn task(s: &mut Scheduler, g: GroupId) -> EntityId {
    s.add_task(g, TaskClass::Fair, NICE_0_WEIGHT, 0).unwrap()
}

/// Switches `core` to `next` the way the engine does.
fn switch_to(s: &mut Scheduler, core: CoreId, next: EntityId, now: Micros) -> usize {
    let n = s.put_prev_task(core, Some(next), now).unwrap();
    s.set_next_task(core, next, now).unwrap();
    n
}

struct Knative {
    kubepods: GroupId,
    container: GroupId,
    other_container: GroupId,
}

/// root/kubepods/{burstable/pod-a/c-a, besteffort/pod-b/c-b}
fn knative(s: &mut Scheduler) -> Knative {
    let kubepods = s.add_group(GroupId::ROOT, "kubepods", false).unwrap();
    let burstable = s.add_group(kubepods, "burstable", false).unwrap();
    let pod = s.add_group(burstable, "pod-a", true).unwrap();
    let container = s.add_group(pod, "c-a", false).unwrap();
    let besteffort = s.add_group(kubepods, "besteffort", false).unwrap();
    let pod_b = s.add_group(besteffort, "pod-b", true).unwrap();
    let other_container = s.add_group(pod_b, "c-b", false).unwrap();
    Knative {
        kubepods,
        container,
        other_container,
    }
}

#[test]
fn update_curr_scales_by_weight() {
    let mut s = sched(PolicyKind::Cfs, 1);
    let a = task(&mut s, GroupId::ROOT);
    let b = s.add_task(GroupId::ROOT, TaskClass::Fair, 2048, 0).unwrap();
    for t in [a, b] {
        s.enqueue_task(t, 0, 0).unwrap();
    }
    switch_to(&mut s, 0, a, 0);
    let v0 = s.entity(a).vruntime;
    s.update_curr(0, 1000).unwrap();
    assert_eq!(s.entity(a).vruntime - v0, 1000);
    assert_eq!(s.entity(a).sum_exec, 1000);

    switch_to(&mut s, 0, b, 1000);
    let v0 = s.entity(b).vruntime;
    s.update_curr(0, 1000).unwrap();
    assert_eq!(s.entity(b).vruntime - v0, 500);
}

#[test]
fn update_curr_propagates_to_ancestors() {
    let mut s = sched(PolicyKind::Cfs, 1);
    let outer = s.add_group(GroupId::ROOT, "outer", false).unwrap();
    let inner = s.add_group(outer, "inner", false).unwrap();
    let t = task(&mut s, inner);
    s.enqueue_task(t, 0, 0).unwrap();
    switch_to(&mut s, 0, t, 0);
    let chain = s.chain(t);
    assert_eq!(chain.len(), 3);
    let before: Vec<u64> = chain.iter().map(|&e| s.entity(e).vruntime).collect();
    s.update_curr(0, 1000).unwrap();
    for (&e, v) in chain.iter().zip(before) {
        assert_eq!(s.entity(e).vruntime, v + 1000, "{e}");
    }
}

#[test]
fn update_curr_rejects_bad_calls() {
    let mut s = sched(PolicyKind::Cfs, 1);
    assert!(s.update_curr(0, 100).is_err());
    let t = task(&mut s, GroupId::ROOT);
    s.enqueue_task(t, 0, 0).unwrap();
    switch_to(&mut s, 0, t, 0);
    assert!(s.update_curr(0, 0).is_err());
}

#[test]
fn enqueue_single_task() {
    let mut s = sched(PolicyKind::Cfs, 1);
    let t = task(&mut s, GroupId::ROOT);
    s.enqueue_task(t, 0, 0).unwrap();
    assert_eq!(s.rq(GroupId::ROOT, 0).nr_running, 1);
    assert_eq!(s.rq(GroupId::ROOT, 0).first_by_vruntime().map(|x| x.1), Some(t));
    assert!(matches!(s.enqueue_task(t, 0, 0), Err(Error::Bookkeeping(_))));
}

#[test]
fn cfs_pick_order_is_ascending_vruntime() {
    let mut s = sched(PolicyKind::Cfs, 1);
    let ids: Vec<EntityId> = (0..3).map(|_| task(&mut s, GroupId::ROOT)).collect();
    // Queue floor stays at zero, so these vruntimes are not clamped.
    for (&t, v) in ids.iter().zip([5_000, 3_000, 9_000]) {
        s.entities[t.index()].vruntime = v;
        s.enqueue_task(t, 0, 0).unwrap();
    }
    let mut order = Vec::new();
    while let Some((t, _)) = s.pick_next_task(0).unwrap() {
        order.push(s.entity(t).vruntime);
        s.dequeue_task(t, 0).unwrap();
    }
    assert_eq!(order, vec![3_000, 5_000, 9_000]);
}

#[test]
fn long_sleeper_is_clamped_to_half_period_behind() {
    let mut s = sched(PolicyKind::Cfs, 1);
    let a = task(&mut s, GroupId::ROOT);
    let sleeper = task(&mut s, GroupId::ROOT);
    s.enqueue_task(a, 0, 0).unwrap();
    switch_to(&mut s, 0, a, 0);
    // `a` runs alone for 10s while the other task sleeps.
    s.update_curr(0, 10_000_000).unwrap();
    let min_v = s.rq(GroupId::ROOT, 0).min_vruntime;
    assert_eq!(min_v, s.entity(a).vruntime);
    s.enqueue_task(sleeper, 0, 10_000_000).unwrap();
    let period = s.policy.params.sched_period(2);
    assert_eq!(s.entity(sleeper).vruntime, min_v - period / 2);

    // Hand simulation over three periods with a 1ms step: the sleeper goes
    // first, and its lead is worth at most one period of exclusive service.
    let mut now = 10_000_000;
    let mut exclusive = 0;
    let mut first = None;
    for _ in 0..(3 * period / 1000) {
        let (next, _) = s.pick_next_task(0).unwrap().unwrap();
        first.get_or_insert(next);
        if s.core(0).curr != Some(next) {
            switch_to(&mut s, 0, next, now);
        }
        s.update_curr(0, 1000).unwrap();
        now += 1000;
        if next == sleeper && s.entity(a).vruntime > s.entity(sleeper).vruntime {
            exclusive += 1000;
        }
    }
    assert_eq!(first, Some(sleeper));
    assert!(exclusive <= period, "sleeper monopolised {exclusive}us");
    let gap = s.entity(a).vruntime.abs_diff(s.entity(sleeper).vruntime);
    assert!(gap <= 1000, "vruntimes did not converge: {gap}");
}

#[test]
fn sleeper_within_a_period_keeps_its_vruntime() {
    let mut s = sched(PolicyKind::Cfs, 1);
    let a = task(&mut s, GroupId::ROOT);
    let b = task(&mut s, GroupId::ROOT);
    s.enqueue_task(a, 0, 0).unwrap();
    switch_to(&mut s, 0, a, 0);
    s.update_curr(0, 20_000).unwrap();
    s.entities[b.index()].vruntime = 16_000;
    s.enqueue_task(b, 0, 20_000).unwrap();
    assert_eq!(s.entity(b).vruntime, 16_000);
}

#[test]
fn root_task_descends_zero_levels() {
    let mut s = sched(PolicyKind::Cfs, 1);
    let t = task(&mut s, GroupId::ROOT);
    assert_eq!(s.pick_next_task(0).unwrap(), None);
    s.enqueue_task(t, 0, 0).unwrap();
    assert_eq!(s.pick_next_task(0).unwrap(), Some((t, 0)));
}

#[test]
fn knative_nest_descends_four_levels() {
    let mut s = sched(PolicyKind::Cfs, 1);
    let k = knative(&mut s);
    let t = task(&mut s, k.container);
    s.enqueue_task(t, 0, 0).unwrap();
    assert_eq!(s.pick_next_task(0).unwrap(), Some((t, 4)));
    s.check_invariants().unwrap();
}

#[test]
fn lags_picks_lowest_credit_group() {
    let mut s = sched(PolicyKind::Lags, 1);
    let a = s.add_group(GroupId::ROOT, "fn-a", true).unwrap();
    let b = s.add_group(GroupId::ROOT, "fn-b", true).unwrap();
    s.set_group_credit(a, 10.0);
    s.set_group_credit(b, 50.0);
    let tb = task(&mut s, b);
    let ta = task(&mut s, a);
    s.enqueue_task(tb, 0, 0).unwrap();
    s.enqueue_task(ta, 0, 0).unwrap();
    assert_eq!(s.pick_next_task(0).unwrap(), Some((ta, 1)));
}

#[test]
fn cfs_ignores_credit() {
    let mut s = sched(PolicyKind::Cfs, 1);
    let a = s.add_group(GroupId::ROOT, "fn-a", true).unwrap();
    let b = s.add_group(GroupId::ROOT, "fn-b", true).unwrap();
    s.set_group_credit(a, 10.0);
    s.set_group_credit(b, 50.0);
    let tb = task(&mut s, b);
    let ta = task(&mut s, a);
    s.enqueue_task(tb, 0, 0).unwrap();
    s.enqueue_task(ta, 0, 0).unwrap();
    // Equal vruntimes: the lower group entity id (fn-a's) wins the tie.
    assert_eq!(s.pick_next_task(0).unwrap(), Some((ta, 1)));
    s.set_group_credit(a, 99.0);
    assert_eq!(s.pick_next_task(0).unwrap(), Some((ta, 1)));
}

#[test]
fn credit_positions_are_not_resorted_while_queued() {
    let mut s = sched(PolicyKind::Lags, 1);
    let gs: Vec<GroupId> = (0..3)
        .map(|i| s.add_group(GroupId::ROOT, &format!("fn-{i}"), true).unwrap())
        .collect();
    for (&g, c) in gs.iter().zip([5.0, 1.0, 9.0]) {
        s.set_group_credit(g, c);
        let t = task(&mut s, g);
        s.enqueue_task(t, 0, 0).unwrap();
    }
    let first = s.rq(GroupId::ROOT, 0).first_credit().unwrap();
    assert_eq!(s.entity(first).kind, EntityKind::Group(gs[1]));
    // A credit change does not move the queued entity.
    s.set_group_credit(gs[1], 100.0);
    assert_eq!(s.rq(GroupId::ROOT, 0).first_credit(), Some(first));
}

#[test]
fn put_prev_root_task_reinserts_once() {
    let mut s = sched(PolicyKind::Cfs, 1);
    let a = task(&mut s, GroupId::ROOT);
    let b = task(&mut s, GroupId::ROOT);
    s.enqueue_task(a, 0, 0).unwrap();
    s.enqueue_task(b, 0, 0).unwrap();
    switch_to(&mut s, 0, a, 0);
    s.update_curr(0, 3000).unwrap();
    assert_eq!(s.put_prev_task(0, Some(b), 3000).unwrap(), 1);
}

#[test]
fn put_prev_sibling_in_same_leaf_reinserts_once() {
    let mut s = sched(PolicyKind::Cfs, 1);
    let k = knative(&mut s);
    let a = task(&mut s, k.container);
    let b = task(&mut s, k.container);
    s.enqueue_task(a, 0, 0).unwrap();
    s.enqueue_task(b, 0, 0).unwrap();
    switch_to(&mut s, 0, a, 0);
    s.update_curr(0, 3000).unwrap();
    assert_eq!(switch_to(&mut s, 0, b, 3000), 1);
    s.check_invariants().unwrap();
}

#[test]
fn put_prev_disjoint_subtree_reinserts_four() {
    let mut s = sched(PolicyKind::Cfs, 1);
    let k = knative(&mut s);
    let a = task(&mut s, k.container);
    let b = task(&mut s, k.other_container);
    s.enqueue_task(a, 0, 0).unwrap();
    s.enqueue_task(b, 0, 0).unwrap();
    switch_to(&mut s, 0, a, 0);
    s.update_curr(0, 3000).unwrap();
    assert_eq!(switch_to(&mut s, 0, b, 3000), 4);
    // kubepods itself stays current: both tasks live below it.
    let kube_gse = s.group(k.kubepods).gse[0];
    assert_eq!(s.rq(GroupId::ROOT, 0).curr, Some(kube_gse));
    s.check_invariants().unwrap();
}

#[test]
fn put_prev_skips_blocked_entities() {
    let mut s = sched(PolicyKind::Cfs, 1);
    let k = knative(&mut s);
    let a = task(&mut s, k.container);
    let b = task(&mut s, k.other_container);
    s.enqueue_task(a, 0, 0).unwrap();
    s.enqueue_task(b, 0, 0).unwrap();
    switch_to(&mut s, 0, a, 0);
    s.update_curr(0, 3000).unwrap();
    // `a` completes: its container, pod and burstable groups empty out.
    s.dequeue_task(a, 3000).unwrap();
    assert_eq!(s.put_prev_task(0, Some(b), 3000).unwrap(), 0);
    s.set_next_task(0, b, 3000).unwrap();
    s.check_invariants().unwrap();
}

#[test]
fn pick_then_put_restores_queues() {
    let mut s = sched(PolicyKind::Cfs, 1);
    let k = knative(&mut s);
    let tasks: Vec<EntityId> = (0..3)
        .map(|i| task(&mut s, if i % 2 == 0 { k.container } else { k.other_container }))
        .collect();
    for &t in &tasks {
        s.enqueue_task(t, 0, 0).unwrap();
    }
    let before = s.snapshot(0);
    let (next, _) = s.pick_next_task(0).unwrap().unwrap();
    s.set_next_task(0, next, 0).unwrap();
    s.put_prev_task(0, None, 0).unwrap();
    assert_eq!(s.snapshot(0), before);
    for g in s.groups() {
        assert_eq!(g.rqs[0].curr, None);
    }
    s.check_invariants().unwrap();
}

#[test]
fn group_fairness_with_unequal_thread_counts() {
    let mut s = sched(PolicyKind::Cfs, 1);
    let g1 = s.add_group(GroupId::ROOT, "one", false).unwrap();
    let g10 = s.add_group(GroupId::ROOT, "ten", false).unwrap();
    let t1 = task(&mut s, g1);
    s.enqueue_task(t1, 0, 0).unwrap();
    let many: Vec<EntityId> = (0..10).map(|_| task(&mut s, g10)).collect();
    for &t in &many {
        s.enqueue_task(t, 0, 0).unwrap();
    }
    let mut now = 0;
    let tick = 4000;
    let (first, _) = s.pick_next_task(0).unwrap().unwrap();
    switch_to(&mut s, 0, first, 0);
    while now < 10_000_000 {
        s.update_curr(0, tick).unwrap();
        now += tick;
        if s.tick_wants_resched(0) {
            let (next, _) = s.pick_next_task(0).unwrap().unwrap();
            if Some(next) == s.core(0).curr {
                s.restart_slice(0);
            } else {
                switch_to(&mut s, 0, next, now);
            }
        }
    }
    let one = s.entity(t1).sum_exec as f64 / now as f64;
    assert!((one - 0.5).abs() <= 0.02, "single-thread group share {one}");
}

#[test]
fn wakeup_preemption_uses_matching_entities() {
    let mut s = sched(PolicyKind::Lags, 1);
    let a = s.add_group(GroupId::ROOT, "fn-a", true).unwrap();
    let b = s.add_group(GroupId::ROOT, "fn-b", true).unwrap();
    s.set_group_credit(a, 9.0);
    s.set_group_credit(b, 2.0);
    let ta = task(&mut s, a);
    let ta2 = task(&mut s, a);
    let tb = task(&mut s, b);
    s.enqueue_task(ta, 0, 0).unwrap();
    switch_to(&mut s, 0, ta, 0);
    s.update_curr(0, 100).unwrap();
    // Sibling in the same function: vruntime rule with granularity.
    s.enqueue_task(ta2, 0, 100).unwrap();
    assert!(!s.wakeup_preempts(0, ta2));
    // Lower-credit function: preempts without margin.
    s.enqueue_task(tb, 0, 100).unwrap();
    assert!(s.wakeup_preempts(0, tb));
    s.set_group_credit(b, 9.5);
    assert!(!s.wakeup_preempts(0, tb));
}

#[test]
fn rr_tasks_bypass_the_fair_tree() {
    let mut s = sched(PolicyKind::Cfs, 1);
    let f = task(&mut s, GroupId::ROOT);
    let r = s.add_task(GroupId::ROOT, TaskClass::Rr, NICE_0_WEIGHT, 0).unwrap();
    s.enqueue_task(f, 0, 0).unwrap();
    switch_to(&mut s, 0, f, 0);
    s.enqueue_task(r, 0, 0).unwrap();
    assert_eq!(s.fair_runnable(0), 1);
    assert_eq!(s.nr_runnable(0), 2);
    assert!(s.wakeup_preempts(0, r));
    assert_eq!(s.put_prev_task(0, Some(r), 0).unwrap(), 1);
    s.set_next_task(0, r, 0).unwrap();
    assert_eq!(s.core(0).curr, Some(r));
    s.check_invariants().unwrap();
}

#[test]
fn eevdf_lags_sum_to_zero() {
    let mut s = sched(PolicyKind::Eevdf, 1);
    let ts: Vec<EntityId> = (0..4).map(|_| task(&mut s, GroupId::ROOT)).collect();
    s.set_task_slice(ts[0], 1000);
    s.set_task_slice(ts[3], 9000);
    for &t in &ts {
        s.enqueue_task(t, 0, 0).unwrap();
    }
    let mut now = 0;
    let (first, _) = s.pick_next_task(0).unwrap().unwrap();
    switch_to(&mut s, 0, first, 0);
    for step in 0..2000u64 {
        s.update_curr(0, 500).unwrap();
        now += 500;
        let lags = s.lags(GroupId::ROOT, 0);
        let sum: f64 = lags.iter().map(|&(id, l)| l * s.entity(id).weight as f64).sum();
        assert!(sum.abs() <= 1e-6 * lags.len() as f64 * 1024.0, "lag sum {sum}");
        if step % 8 == 7 {
            let (next, _) = s.pick_next_task(0).unwrap().unwrap();
            if Some(next) != s.core(0).curr {
                switch_to(&mut s, 0, next, now);
            }
        }
    }
}

#[test]
fn load_avg_matches_sum_of_core_entities() {
    let mut s = sched(PolicyKind::Lags, 3);
    let g = s.add_group(GroupId::ROOT, "fn", true).unwrap();
    let ts: Vec<EntityId> = (0..3).map(|_| task(&mut s, g)).collect();
    let mut now = 0;
    for (i, &t) in ts.iter().enumerate() {
        s.enqueue_task(t, i, now).unwrap();
        switch_to(&mut s, i, t, now);
    }
    for round in 0..50u64 {
        now += 3000;
        for core in 0..3 {
            if s.core(core).curr.is_some() {
                s.update_curr(core, 3000).unwrap();
            }
        }
        // Core 2's task blocks and wakes on alternate rounds.
        if round % 2 == 0 {
            s.dequeue_task(ts[2], now).unwrap();
            s.put_prev_task(2, None, now).unwrap();
        } else {
            s.enqueue_task(ts[2], 2, now).unwrap();
            switch_to(&mut s, 2, ts[2], now);
        }
        s.update_load_credit(now, round).unwrap();
    }
    s.sync_entity_loads(now).unwrap();
    let per_core = s.group(g).gse.iter().map(|&e| s.entity(e).pelt.load_avg);
    let sum = crate::load::update_tg_load_avg(per_core);
    let agg = s.group(g).load_avg;
    assert!((sum - agg).abs() < 1e-6 * agg.max(1.0), "{sum} vs {agg}");
    assert!(agg > 1024.0 && agg < 3.0 * 1024.0);
}
