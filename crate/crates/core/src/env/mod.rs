//! Physical and economic model of the multi-region edge system.
//!
//! Regions rent bandwidth and VMs once per long slot; within a long slot the
//! ESP allocates per-user uplink bandwidth and VM queues every short slot and
//! collects revenue for tasks that meet the deadline.

mod catalog;
mod link;
mod step;

pub use catalog::{
    rented_and_cost, BandwidthOption, RegionCatalog, RegionSlice, RentalSummary, ResourceCatalog,
    SliceDecision, VmOption,
};
pub use link::{settle, task_timing, uplink_rate, EconParams, RadioParams, TimingBreakdown};
pub use step::{
    horizon_profit, step, AllocationAction, RegionState, SettlementRecord, StepOutcome,
    VmQueueState,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One user's offloading request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: u64,
    /// Input size in bits.
    pub data_size: f64,
    /// CPU cycles per input bit.
    pub compute_density: f64,
    /// Revenue weight.
    pub priority: f64,
    /// Distance to the base station in meters.
    pub distance: f64,
    pub arrival_slot: usize,
}

impl TaskSpec {
    pub fn new(
        id: u64,
        data_size: f64,
        compute_density: f64,
        priority: f64,
        distance: f64,
        arrival_slot: usize,
    ) -> Result<Self> {
        let task = TaskSpec {
            id,
            data_size,
            compute_density,
            priority,
            distance,
            arrival_slot,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("data_size", self.data_size),
            ("compute_density", self.compute_density),
            ("priority", self.priority),
            ("distance", self.distance),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "task {}: {name} must be positive and finite, got {v}",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Total CPU cycles the task needs (`d * eta`).
    pub fn work(&self) -> f64 {
        self.data_size * self.compute_density
    }
}
