//! Comparator offloading heuristics and exact brute-force references.
//!
//! All heuristics share one bandwidth rule: a task gets exactly the bandwidth
//! that uploads it in `kappa_up * T^max` at its own distance. They differ
//! only in the order in which tasks are packed.

use serde::{Deserialize, Serialize};

use crate::env::{
    task_timing, AllocationAction, EconParams, RadioParams, RegionSlice, RegionState,
    ResourceCatalog, SliceDecision, TaskSpec, VmQueueState,
};
use crate::error::{Error, Result};
use crate::slicer::{DeadlineSplit, DemandVector};

pub const OFFLOAD_ORACLE_BOUND: usize = 12;
pub const SLICING_ORACLE_BOUND: usize = 8;

/// Environment constants the offloading policies read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyContext {
    pub econ: EconParams,
    pub radio: RadioParams,
    pub split: DeadlineSplit,
}

/// Bandwidth (Hz) that uploads `task` in `kappa_up * T^max`.
pub fn deadline_bandwidth(task: &TaskSpec, ctx: &PolicyContext) -> f64 {
    task.data_size
        / (ctx.split.kappa_up * ctx.econ.deadline * ctx.radio.spectral_efficiency(task.distance))
}

/// Share of the region's rented bandwidth requested by each task.
fn shares(state: &RegionState, ctx: &PolicyContext) -> Vec<f64> {
    state
        .tasks
        .iter()
        .map(|t| {
            if state.bandwidth > 0.0 {
                deadline_bandwidth(t, ctx) / state.bandwidth
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

/// Bandwidth share plus compute share of the execution part of the deadline.
fn normalized_demand(state: &RegionState, ctx: &PolicyContext) -> Vec<f64> {
    let compute = state.vm_count() as f64
        * state.vm_frequency
        * (1.0 - ctx.split.kappa_up)
        * ctx.econ.deadline;
    shares(state, ctx)
        .into_iter()
        .zip(&state.tasks)
        .map(|(s, t)| s + t.work() / compute)
        .collect()
}

/// Replays the queue of one VM in task-index order, as `step` does, and
/// reports whether every member finishes by the deadline.
fn vm_schedule_ok(
    state: &RegionState,
    queue: VmQueueState,
    members: &[usize],
    share: &[f64],
    ctx: &PolicyContext,
) -> bool {
    let mut pending = queue;
    for &j in members {
        let task = &state.tasks[j];
        let bw = share[j] * state.bandwidth;
        match task_timing(task, bw, &pending, state.vm_frequency, &ctx.radio) {
            Ok(t) if t.total <= ctx.econ.deadline => pending.pending_work += task.work(),
            _ => return false,
        }
    }
    true
}

/// Packs tasks in `order`: each gets its deadline bandwidth and the least
/// loaded VM on which it and every task already there stay on time. Tasks
/// that do not fit get nothing and packing continues.
pub fn pack_in_order(state: &RegionState, order: &[usize], ctx: &PolicyContext) -> AllocationAction {
    let n = state.tasks.len();
    let share = shares(state, ctx);
    let mut action = AllocationAction::idle(n);
    let vms = state.vm_count();
    if vms == 0 {
        return action;
    }
    let mut remaining = 1.0;
    let mut load: Vec<f64> = state.queues.iter().map(|q| q.pending_work).collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); vms];
    for &j in order {
        if !share[j].is_finite() || share[j] > remaining {
            continue;
        }
        let mut candidates: Vec<usize> = (0..vms).collect();
        candidates.sort_by(|&a, &b| load[a].total_cmp(&load[b]).then(a.cmp(&b)));
        for m in candidates {
            let mut trial = members[m].clone();
            let pos = trial.partition_point(|&i| i < j);
            trial.insert(pos, j);
            if vm_schedule_ok(state, state.queues[m], &trial, &share, ctx) {
                members[m] = trial;
                load[m] += state.tasks[j].work();
                remaining -= share[j];
                action.bw_fraction[j] = share[j];
                action.vm_index[j] = m;
                break;
            }
        }
    }
    action
}

fn served(action: &AllocationAction) -> usize {
    action.bw_fraction.iter().filter(|&&f| f > 0.0).count()
}

fn served_revenue(state: &RegionState, action: &AllocationAction, econ: &EconParams) -> f64 {
    state
        .tasks
        .iter()
        .zip(&action.bw_fraction)
        .filter(|(_, &f)| f > 0.0)
        .map(|(t, _)| econ.reward_per_task * t.priority)
        .sum()
}

fn greedy_order(state: &RegionState) -> Vec<usize> {
    let t = &state.tasks;
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.sort_by(|&a, &b| {
        t[b].priority
            .total_cmp(&t[a].priority)
            .then(t[a].work().total_cmp(&t[b].work()))
            .then(t[a].id.cmp(&t[b].id))
    });
    order
}

fn ascending_by(state: &RegionState, key: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..key.len()).collect();
    order.sort_by(|&a, &b| {
        key[a]
            .total_cmp(&key[b])
            .then(state.tasks[a].id.cmp(&state.tasks[b].id))
    });
    order
}

/// Highest priority first; ties go to less work, then lower id.
pub fn greedy_policy(state: &RegionState, ctx: &PolicyContext) -> AllocationAction {
    pack_in_order(state, &greedy_order(state), ctx)
}

/// Smallest total demand first. Several demand orders are tried (including
/// the greedy order) and the packing serving the most tasks wins.
pub fn max_transaction_policy(state: &RegionState, ctx: &PolicyContext) -> AllocationAction {
    let share = shares(state, ctx);
    let work: Vec<f64> = state.tasks.iter().map(TaskSpec::work).collect();
    let orders = [
        ascending_by(state, &normalized_demand(state, ctx)),
        ascending_by(state, &share),
        ascending_by(state, &work),
        greedy_order(state),
    ];
    let mut best: Option<AllocationAction> = None;
    for order in &orders {
        let a = pack_in_order(state, order, ctx);
        let better = match &best {
            None => true,
            Some(b) => {
                served(&a) > served(b)
                    || (served(&a) == served(b)
                        && served_revenue(state, &a, &ctx.econ)
                            > served_revenue(state, b, &ctx.econ))
            }
        };
        if better {
            best = Some(a);
        }
    }
    best.unwrap_or_else(|| AllocationAction::idle(state.tasks.len()))
}

/// Bid `priority / normalized demand`, served in descending bid order.
pub fn auction_policy(state: &RegionState, ctx: &PolicyContext) -> AllocationAction {
    let demand = normalized_demand(state, ctx);
    let bids: Vec<f64> = state
        .tasks
        .iter()
        .zip(&demand)
        .map(|(t, d)| -(t.priority / d))
        .collect();
    pack_in_order(state, &ascending_by(state, &bids), ctx)
}

/// Exact best revenue for one short slot under the shared bandwidth rule.
///
/// Depth-first over tasks in index order; each task is skipped or appended to
/// one VM. Appending in index order means earlier tasks are never delayed, so
/// only the new task's timing needs checking. VMs with identical backlog are
/// interchangeable and only the first is tried.
pub fn brute_force_offload(state: &RegionState, ctx: &PolicyContext) -> Result<(f64, AllocationAction)> {
    let n = state.tasks.len();
    if n > OFFLOAD_ORACLE_BOUND {
        return Err(Error::TooLarge {
            size: n,
            bound: OFFLOAD_ORACLE_BOUND,
        });
    }
    struct Search<'a> {
        state: &'a RegionState,
        ctx: &'a PolicyContext,
        share: Vec<f64>,
        value: Vec<f64>,
        suffix: Vec<f64>,
        best: f64,
        best_assign: Vec<Option<usize>>,
        assign: Vec<Option<usize>>,
    }
    impl Search<'_> {
        fn go(&mut self, j: usize, remaining: f64, queues: &mut Vec<VmQueueState>, revenue: f64) {
            if revenue > self.best {
                self.best = revenue;
                self.best_assign = self.assign.clone();
            }
            if j == self.share.len() || revenue + self.suffix[j] <= self.best {
                return;
            }
            let task = &self.state.tasks[j];
            if self.share[j].is_finite() && self.share[j] <= remaining {
                let bw = self.share[j] * self.state.bandwidth;
                for m in 0..queues.len() {
                    if queues[..m].iter().any(|q| q.pending_work == queues[m].pending_work) {
                        continue;
                    }
                    let on_time = matches!(
                        task_timing(task, bw, &queues[m], self.state.vm_frequency, &self.ctx.radio),
                        Ok(t) if t.total <= self.ctx.econ.deadline
                    );
                    if !on_time {
                        continue;
                    }
                    let before = queues[m];
                    queues[m].pending_work += task.work();
                    self.assign[j] = Some(m);
                    self.go(j + 1, remaining - self.share[j], queues, revenue + self.value[j]);
                    self.assign[j] = None;
                    queues[m] = before;
                }
            }
            self.go(j + 1, remaining, queues, revenue);
        }
    }
    let value: Vec<f64> = state
        .tasks
        .iter()
        .map(|t| ctx.econ.reward_per_task * t.priority)
        .collect();
    let mut suffix = vec![0.0; n + 1];
    for j in (0..n).rev() {
        suffix[j] = suffix[j + 1] + value[j];
    }
    let mut search = Search {
        state,
        ctx,
        share: shares(state, ctx),
        value,
        suffix,
        best: 0.0,
        best_assign: vec![None; n],
        assign: vec![None; n],
    };
    let mut queues = state.queues.clone();
    search.go(0, 1.0, &mut queues, 0.0);
    let mut action = AllocationAction::idle(n);
    for (j, a) in search.best_assign.iter().enumerate() {
        if let Some(m) = a {
            action.bw_fraction[j] = search.share[j];
            action.vm_index[j] = *m;
        }
    }
    Ok((search.best, action))
}

/// Cheapest feasible one-hot rental per region, by enumerating every
/// (bandwidth, VM) option pair.
pub fn brute_force_slicing(demand: &DemandVector, catalog: &ResourceCatalog) -> Result<(f64, SliceDecision)> {
    if demand.regions.len() != catalog.regions.len() {
        return Err(Error::Shape(format!(
            "demand for {} regions, catalog for {}",
            demand.regions.len(),
            catalog.regions.len()
        )));
    }
    let mut total = 0.0;
    let mut regions = Vec::with_capacity(catalog.regions.len());
    for (i, (d, c)) in demand.regions.iter().zip(&catalog.regions).enumerate() {
        let size = c.bandwidth.len().max(c.vms.len());
        if size > SLICING_ORACLE_BOUND {
            return Err(Error::TooLarge {
                size,
                bound: SLICING_ORACLE_BOUND,
            });
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for (a, bw) in c.bandwidth.iter().enumerate() {
            for (b, vm) in c.vms.iter().enumerate() {
                let fits = bw.capacity >= d.bandwidth - 1e-9 * d.bandwidth.max(1.0)
                    && c.vm_capacity(b) >= d.compute - 1e-9 * d.compute.max(1.0);
                let cost = bw.cost + vm.cost;
                if fits && best.is_none_or(|(bc, _, _)| cost < bc) {
                    best = Some((cost, a, b));
                }
            }
        }
        let Some((cost, a, b)) = best else {
            let (resource, demand, capacity) = if c.bandwidth.last().is_some_and(|o| o.capacity < d.bandwidth) {
                ("bandwidth", d.bandwidth, c.bandwidth.last().map_or(0.0, |o| o.capacity))
            } else {
                ("compute", d.compute, c.vm_capacity(c.vms.len() - 1))
            };
            return Err(Error::InfeasibleSlice {
                region: i,
                resource,
                demand,
                capacity,
                shortfall: demand - capacity,
            });
        };
        total += cost;
        regions.push(RegionSlice::from_indices(a, c.bandwidth.len(), b, c.vms.len()));
    }
    Ok((total, SliceDecision { regions }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{step, BandwidthOption, RegionCatalog, VmOption};
    use crate::slicer::RegionDemand;

    fn ctx() -> PolicyContext {
        PolicyContext {
            econ: EconParams::default(),
            radio: RadioParams::default(),
            split: DeadlineSplit::default(),
        }
    }

    fn task(id: u64, d: f64, eta: f64, rho: f64) -> TaskSpec {
        TaskSpec::new(id, d, eta, rho, 10.0, 0).unwrap()
    }

    /// Bandwidth for exactly `k` tasks of 1e6 bits at 10 m.
    fn region(tasks: Vec<TaskSpec>, k: f64, vms: usize) -> RegionState {
        let per_task = deadline_bandwidth(&task(0, 1e6, 1.0, 1.0), &ctx());
        let mut s = RegionState::new(0, k * per_task * (1.0 + 1e-9), vms, 1e9, 1, 10);
        s.tasks = tasks;
        s
    }

    #[test]
    fn greedy_serves_everything_that_fits() {
        let s = region((0..4).map(|i| task(i, 1e6, 100.0, 1.0)).collect(), 4.0, 2);
        let a = greedy_policy(&s, &ctx());
        assert_eq!(served(&a), 4);
        a.check(2).unwrap();
        let out = step(&s, &a, &ctx().econ, &ctx().radio, 1.0).unwrap();
        assert_eq!(out.reward, 40.0);
    }

    #[test]
    fn greedy_prefers_priority_then_smaller_work() {
        let s = region(vec![task(0, 1e6, 100.0, 1.0), task(1, 1e6, 100.0, 3.0)], 1.0, 1);
        let a = greedy_policy(&s, &ctx());
        assert!(a.bw_fraction[1] > 0.0 && a.bw_fraction[0] == 0.0);

        let s = region(vec![task(0, 1e6, 200.0, 2.0), task(1, 1e6, 100.0, 2.0)], 1.0, 1);
        let a = greedy_policy(&s, &ctx());
        assert!(a.bw_fraction[1] > 0.0 && a.bw_fraction[0] == 0.0);
    }

    #[test]
    fn max_transaction_prefers_tiny_task() {
        let tiny = task(0, 1e6, 10.0, 1.0);
        let huge = task(1, 4e6, 10.0, 3.0);
        let s = region(vec![huge, tiny], 1.0, 1);
        let a = max_transaction_policy(&s, &ctx());
        assert!(a.bw_fraction[1] > 0.0 && a.bw_fraction[0] == 0.0);
    }

    #[test]
    fn auction_bid_order_by_hand() {
        // Bandwidth shares are 1 each; compute shares are work / 5e8.
        // Demands 1.2, 1.6, 1.4 give bids 1/1.2, 2/1.6, 3/1.4: task 2 wins.
        let mut tasks = vec![
            task(0, 1e6, 100.0, 1.0),
            task(1, 1e6, 300.0, 2.0),
            task(2, 1e6, 200.0, 3.0),
        ];
        let s = region(tasks.clone(), 1.0, 1);
        let a = auction_policy(&s, &ctx());
        assert_eq!(served(&a), 1);
        assert!(a.bw_fraction[2] > 0.0);
        // Raising task 1 to priority 5 gives bid 3.125 > 2.14.
        tasks[1].priority = 5.0;
        let s = region(tasks, 1.0, 1);
        let a = auction_policy(&s, &ctx());
        assert!(a.bw_fraction[1] > 0.0);
    }

    #[test]
    fn oracle_trivial_cases() {
        let s = region(vec![], 1.0, 1);
        assert_eq!(brute_force_offload(&s, &ctx()).unwrap().0, 0.0);
        let s = region(vec![task(0, 1e6, 100.0, 2.0)], 1.0, 1);
        assert_eq!(brute_force_offload(&s, &ctx()).unwrap().0, 20.0);
        let s = region((0..13).map(|i| task(i, 1e6, 1.0, 1.0)).collect(), 1.0, 1);
        assert!(matches!(
            brute_force_offload(&s, &ctx()),
            Err(Error::TooLarge { bound: 12, .. })
        ));
    }

    #[test]
    fn oracle_action_realizes_its_revenue() {
        let tasks = vec![
            task(0, 1e6, 300.0, 1.0),
            task(1, 2e6, 100.0, 3.0),
            task(2, 1e6, 250.0, 2.0),
            task(3, 5e5, 400.0, 2.0),
            task(4, 1e6, 150.0, 1.0),
            task(5, 1.5e6, 200.0, 3.0),
        ];
        let s = region(tasks, 3.0, 2);
        let (best, action) = brute_force_offload(&s, &ctx()).unwrap();
        let out = step(&s, &action, &ctx().econ, &ctx().radio, 1.0).unwrap();
        assert_eq!(out.reward, best);
        for h in [greedy_policy, max_transaction_policy, auction_policy] {
            let r = step(&s, &h(&s, &ctx()), &ctx().econ, &ctx().radio, 1.0).unwrap().reward;
            assert!(best >= r);
        }
    }

    fn catalog() -> ResourceCatalog {
        ResourceCatalog {
            regions: vec![RegionCatalog {
                bandwidth: vec![
                    BandwidthOption { capacity: 5.0, cost: 1.0 },
                    BandwidthOption { capacity: 10.0, cost: 3.0 },
                ],
                vms: vec![VmOption { count: 1, cost: 2.0 }, VmOption { count: 2, cost: 3.0 }],
                vm_frequency: 1.0,
            }],
        }
    }

    #[test]
    fn slicing_oracle_cases() {
        let zero = DemandVector {
            regions: vec![RegionDemand { bandwidth: 0.0, compute: 0.0 }],
        };
        let (cost, d) = brute_force_slicing(&zero, &catalog()).unwrap();
        assert_eq!(cost, 3.0);
        assert_eq!(d.regions[0].indices(0).unwrap(), (0, 0));
        let mid = DemandVector {
            regions: vec![RegionDemand { bandwidth: 7.0, compute: 1.5 }],
        };
        assert_eq!(brute_force_slicing(&mid, &catalog()).unwrap().0, 6.0);
        let over = DemandVector {
            regions: vec![RegionDemand { bandwidth: 11.0, compute: 0.0 }],
        };
        assert!(matches!(
            brute_force_slicing(&over, &catalog()),
            Err(Error::InfeasibleSlice { resource: "bandwidth", .. })
        ));
    }
}
