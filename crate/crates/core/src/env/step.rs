use serde::{Deserialize, Serialize};

use super::{settle, task_timing, EconParams, RadioParams, TaskSpec, TimingBreakdown};
use crate::error::{Error, Result};

/// Outstanding work on one VM, in cycles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VmQueueState {
    pub pending_work: f64,
}

/// Bandwidth shares and VM assignments for the tasks of one region in one
/// short slot. Index `j` refers to `RegionState::tasks[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationAction {
    pub bw_fraction: Vec<f64>,
    pub vm_index: Vec<usize>,
}

impl AllocationAction {
    pub fn idle(n_tasks: usize) -> Self {
        AllocationAction {
            bw_fraction: vec![0.0; n_tasks],
            vm_index: vec![0; n_tasks],
        }
    }

    pub fn len(&self) -> usize {
        self.bw_fraction.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bw_fraction.is_empty()
    }

    /// Rescales bandwidth fractions so they sum to at most one.
    pub fn project(&mut self) {
        let sum: f64 = self.bw_fraction.iter().sum();
        if sum > 1.0 {
            for f in &mut self.bw_fraction {
                *f /= sum;
            }
        }
    }

    /// Checks the per-region bandwidth budget (C4) and that every VM index
    /// refers to a rented VM (C5).
    pub fn check(&self, vm_count: usize) -> Result<()> {
        if self.bw_fraction.len() != self.vm_index.len() {
            return Err(Error::Shape(format!(
                "{} bandwidth fractions but {} VM indices",
                self.bw_fraction.len(),
                self.vm_index.len()
            )));
        }
        if let Some(f) = self
            .bw_fraction
            .iter()
            .find(|f| !f.is_finite() || **f < 0.0 || **f > 1.0)
        {
            return Err(Error::ConstraintViolation {
                constraint: "C4",
                detail: format!("bandwidth fraction {f} outside [0, 1]"),
            });
        }
        let sum: f64 = self.bw_fraction.iter().sum();
        if sum > 1.0 + 1e-9 {
            return Err(Error::ConstraintViolation {
                constraint: "C4",
                detail: format!("bandwidth fractions sum to {sum}"),
            });
        }
        if let Some(&m) = self.vm_index.iter().find(|&&m| m >= vm_count) {
            return Err(Error::ConstraintViolation {
                constraint: "C5",
                detail: format!("VM index {m} but only {vm_count} VMs rented"),
            });
        }
        Ok(())
    }
}

/// State of one region within a long slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionState {
    pub region: usize,
    /// Rented bandwidth, Hz.
    pub bandwidth: f64,
    pub vm_frequency: f64,
    /// Tasks waiting for a decision in the current short slot.
    pub tasks: Vec<TaskSpec>,
    /// One queue per rented VM.
    pub queues: Vec<VmQueueState>,
    /// Long-slot index, starting at 1.
    pub long_slot: usize,
    /// Short-slot index within the long slot, in `1..=short_slots`.
    pub short_slot: usize,
    pub short_slots: usize,
}

impl RegionState {
    /// Fresh state right after a slice adjustment: empty queues, first short slot.
    pub fn new(
        region: usize,
        bandwidth: f64,
        vm_count: usize,
        vm_frequency: f64,
        long_slot: usize,
        short_slots: usize,
    ) -> Self {
        RegionState {
            region,
            bandwidth,
            vm_frequency,
            tasks: Vec::new(),
            queues: vec![VmQueueState::default(); vm_count],
            long_slot,
            short_slot: 1,
            short_slots: short_slots.max(1),
        }
    }

    pub fn vm_count(&self) -> usize {
        self.queues.len()
    }
}

/// Per-task outcome of one short slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettlementRecord {
    pub region: usize,
    pub long_slot: usize,
    pub short_slot: usize,
    pub task_id: u64,
    pub priority: f64,
    /// Allocated bandwidth, Hz. Zero means the task was not offloaded.
    pub bandwidth: f64,
    pub vm: Option<usize>,
    pub timing: Option<TimingBreakdown>,
    pub revenue: f64,
}

impl SettlementRecord {
    pub fn offloaded(&self) -> bool {
        self.timing.is_some()
    }

    pub fn on_time(&self) -> bool {
        self.revenue > 0.0
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub reward: f64,
    pub next: RegionState,
    pub records: Vec<SettlementRecord>,
    /// Cycles executed during the slot, summed over VMs.
    pub busy_cycles: f64,
    /// Bandwidth handed out in the slot, Hz.
    pub allocated_bandwidth: f64,
}

/// Applies `action` to the tasks of `state` for one short slot.
///
/// Tasks are placed in order: each one's timing is evaluated against its VM's
/// backlog at that moment. On-time tasks join the queue and earn
/// `reward * priority`; late tasks earn nothing and are dropped. Queues then
/// drain for `slot_duration` seconds and the clock advances.
pub fn step(
    state: &RegionState,
    action: &AllocationAction,
    econ: &EconParams,
    radio: &RadioParams,
    slot_duration: f64,
) -> Result<StepOutcome> {
    if action.len() != state.tasks.len() {
        return Err(Error::Shape(format!(
            "action covers {} tasks, region {} has {}",
            action.len(),
            state.region,
            state.tasks.len()
        )));
    }
    let mut action = action.clone();
    action.project();
    action.check(state.vm_count())?;

    let mut next = state.clone();
    let mut records = Vec::with_capacity(state.tasks.len());
    let mut reward = 0.0;
    let mut allocated_bandwidth = 0.0;
    for (j, task) in state.tasks.iter().enumerate() {
        let bw = action.bw_fraction[j] * state.bandwidth;
        let vm = action.vm_index[j];
        let mut record = SettlementRecord {
            region: state.region,
            long_slot: state.long_slot,
            short_slot: state.short_slot,
            task_id: task.id,
            priority: task.priority,
            bandwidth: bw,
            vm: None,
            timing: None,
            revenue: 0.0,
        };
        if bw > 0.0 {
            allocated_bandwidth += bw;
            let timing = task_timing(task, bw, &next.queues[vm], state.vm_frequency, radio)?;
            let revenue = settle(&timing, econ, task.priority);
            if revenue > 0.0 {
                next.queues[vm].pending_work += task.work();
            }
            record.vm = Some(vm);
            record.timing = Some(timing);
            record.revenue = revenue;
            reward += revenue;
        }
        records.push(record);
    }

    let capacity = slot_duration * state.vm_frequency;
    let mut busy_cycles = 0.0;
    for q in &mut next.queues {
        let done = q.pending_work.min(capacity);
        busy_cycles += done;
        q.pending_work = (q.pending_work - capacity).max(0.0);
    }
    next.tasks.clear();
    if next.short_slot < next.short_slots {
        next.short_slot += 1;
    } else {
        next.short_slot = 1;
        next.long_slot += 1;
    }

    Ok(StepOutcome {
        reward,
        next,
        records,
        busy_cycles,
        allocated_bandwidth,
    })
}

/// Long-term profit `sum_h (R^h - C^h)`.
pub fn horizon_profit(trace: &[(f64, f64)]) -> f64 {
    trace.iter().map(|(r, c)| r - c).sum()
}
