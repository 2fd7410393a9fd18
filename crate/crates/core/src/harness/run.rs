use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::Config;
use crate::env::{rented_and_cost, step, AllocationAction, RegionSlice, RegionState, SliceDecision};
use crate::error::{Error, Result};
use crate::forecast::{TrafficPredictor, TrafficSeries};
use crate::policy::OffloadPolicy;
use crate::scenario::Scenario;
use crate::slicer::{adjust_slices, SlicerContext};

pub const METRICS_HEADER: [&str; 8] = [
    "h",
    "revenue",
    "cost",
    "profit",
    "offloaded",
    "hit_rate",
    "bw_util",
    "vm_util",
];

/// Outcome of one long slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub h: usize,
    pub revenue: f64,
    pub cost: f64,
    pub profit: f64,
    /// Tasks completed by their deadline.
    pub offloaded: u64,
    /// On-time tasks over arrived tasks.
    pub hit_rate: f64,
    /// Allocated over rented bandwidth, averaged over regions and short slots.
    pub bw_util: f64,
    /// Executed over available VM cycles.
    pub vm_util: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub revenue: f64,
    pub cost: f64,
    pub profit: f64,
    pub offloaded: u64,
    pub arrived: u64,
    pub hit_rate: f64,
    pub bw_util: f64,
    pub vm_util: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: String,
    pub predictor: String,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub totals: Totals,
    /// Slots whose rental or executed allocation broke C1 to C5.
    pub violations: u64,
    /// Short slots where the policy failed and the region idled.
    pub policy_errors: u64,
}

/// Caps every forecast at `max` users.
struct Capped<'a> {
    inner: &'a dyn TrafficPredictor,
    max: f64,
}

impl TrafficPredictor for Capped<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn predict(&self, history: &TrafficSeries, horizon: usize) -> Result<Vec<Vec<f64>>> {
        let mut f = self.inner.predict(history, horizon)?;
        f.iter_mut().flatten().for_each(|v| *v = v.clamp(0.0, self.max));
        Ok(f)
    }
}

/// Largest bandwidth and VM option everywhere; used when there is no history.
fn largest_slice(config: &Config) -> SliceDecision {
    SliceDecision {
        regions: config
            .catalog()
            .regions
            .iter()
            .map(|r| RegionSlice::from_indices(r.bandwidth.len() - 1, r.bandwidth.len(), r.vms.len() - 1, r.vms.len()))
            .collect(),
    }
}

/// Executes the two-timescale loop: per long slot, adjust slices from the
/// forecast and pay for them; per short slot, let `policy` allocate each
/// region's arriving tasks and settle them.
pub fn run_scenario(
    config: &Config,
    scenario: &Scenario,
    policy: &mut dyn OffloadPolicy,
    predictor: &dyn TrafficPredictor,
    seed: u64,
) -> Result<MetricsReport> {
    config.validate()?;
    if scenario.tasks.len() != config.horizon {
        return Err(Error::InvalidInput(format!(
            "scenario has {} long slots, config horizon is {}",
            scenario.tasks.len(),
            config.horizon
        )));
    }
    let catalog = config.catalog();
    let fallback = largest_slice(config);
    let ctx = SlicerContext {
        catalog: &catalog,
        profile: config.tasks.profile(),
        radio: config.radio,
        econ: config.econ,
        split: config.split,
        fallback: Some(&fallback),
    };
    let capped = Capped {
        inner: predictor,
        max: config.max_users as f64,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);

    let mut rows = Vec::with_capacity(config.horizon);
    let mut totals = Totals::default();
    let (mut violations, mut policy_errors) = (0u64, 0u64);
    let (mut bw_used, mut bw_rented, mut cycles_used, mut cycles_rented) = (0.0, 0.0, 0.0, 0.0);
    for h in 1..=config.horizon {
        let slices = adjust_slices(&scenario.history_before(h), &ctx, &capped, &mut rng)?;
        let rental = match rented_and_cost(&catalog, &slices) {
            Ok(r) => r,
            Err(e @ Error::ConstraintViolation { .. }) => {
                log::error!("long slot {h}: {e}");
                violations += 1;
                rented_and_cost(&catalog, &fallback)?
            }
            Err(e) => return Err(e),
        };
        let mut revenue = 0.0;
        let (mut on_time, mut arrived) = (0u64, 0u64);
        let (mut slot_bw_used, mut slot_bw, mut slot_cycles_used, mut slot_cycles) = (0.0, 0.0, 0.0, 0.0);
        for (i, &(bandwidth, vms)) in rental.per_region.iter().enumerate() {
            let frequency = catalog.regions[i].vm_frequency;
            let mut state = RegionState::new(i, bandwidth, vms, frequency, h, config.short_slots);
            for t in 0..config.short_slots {
                state.tasks = scenario.tasks[h - 1][t][i].clone();
                let action = match policy.act(&state).and_then(|a| a.check(vms).map(|_| a)) {
                    Ok(a) => a,
                    Err(e) => {
                        log::warn!("long slot {h}, region {i}, short slot {}: {e}", t + 1);
                        policy_errors += 1;
                        AllocationAction::idle(state.tasks.len())
                    }
                };
                let out = step(&state, &action, &config.econ, &config.radio, config.slot_duration)?;
                if out.allocated_bandwidth > bandwidth * (1.0 + 1e-9)
                    || out.records.iter().any(|r| r.vm.is_some_and(|v| v >= vms))
                    || out.records.iter().flat_map(|r| r.timing).any(|t| {
                        t.upload < 0.0 || t.queueing < 0.0 || t.execution < 0.0
                    })
                {
                    violations += 1;
                }
                revenue += out.reward;
                arrived += state.tasks.len() as u64;
                on_time += out.records.iter().filter(|r| r.on_time()).count() as u64;
                slot_bw_used += out.allocated_bandwidth;
                slot_bw += bandwidth;
                slot_cycles_used += out.busy_cycles;
                slot_cycles += vms as f64 * frequency * config.slot_duration;
                state = out.next;
            }
        }
        let ratio = |a: f64, b: f64| if b > 0.0 { (a / b).clamp(0.0, 1.0) } else { 0.0 };
        let row = MetricsRow {
            h,
            revenue,
            cost: rental.cost,
            profit: revenue - rental.cost,
            offloaded: on_time,
            hit_rate: ratio(on_time as f64, arrived as f64),
            bw_util: ratio(slot_bw_used, slot_bw),
            vm_util: ratio(slot_cycles_used, slot_cycles),
        };
        totals.revenue += row.revenue;
        totals.cost += row.cost;
        totals.profit += row.profit;
        totals.offloaded += on_time;
        totals.arrived += arrived;
        bw_used += slot_bw_used;
        bw_rented += slot_bw;
        cycles_used += slot_cycles_used;
        cycles_rented += slot_cycles;
        log::debug!("long slot {h}: revenue {revenue:.2}, cost {:.2}", rental.cost);
        rows.push(row);
    }
    let ratio = |a: f64, b: f64| if b > 0.0 { (a / b).clamp(0.0, 1.0) } else { 0.0 };
    totals.hit_rate = ratio(totals.offloaded as f64, totals.arrived as f64);
    totals.bw_util = ratio(bw_used, bw_rented);
    totals.vm_util = ratio(cycles_used, cycles_rented);
    if violations > 0 {
        log::error!("{violations} constraint violations");
    }
    Ok(MetricsReport {
        policy: policy.name().to_string(),
        predictor: predictor.name().to_string(),
        seed,
        rows,
        totals,
        violations,
        policy_errors,
    })
}
