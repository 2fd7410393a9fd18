//! Long-slot slice adjustment: forecast demand, relaxed rental LP per region,
//! randomized rounding back to one-hot choices.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EconParams, RadioParams, RegionSlice, ResourceCatalog, SliceDecision};
use crate::error::{Error, Result};
use crate::forecast::{TrafficPredictor, TrafficSeries};

/// Slack for comparing a capacity against a demand computed in floating point.
const CAPACITY_SLACK: f64 = 1e-9;

fn covers(capacity: f64, demand: f64) -> bool {
    capacity >= demand - CAPACITY_SLACK * demand.abs().max(1.0)
}

/// Mean task attributes used to turn user counts into resource demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskProfile {
    pub mean_data_size: f64,
    pub mean_compute_density: f64,
    pub mean_distance: f64,
    pub mean_priority: f64,
}

/// Split of the deadline between uploading and execution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeadlineSplit {
    pub kappa_up: f64,
    pub kappa_exe: f64,
}

impl Default for DeadlineSplit {
    fn default() -> Self {
        DeadlineSplit {
            kappa_up: 0.5,
            kappa_exe: 0.5,
        }
    }
}

impl DeadlineSplit {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("slicer.kappa_up", self.kappa_up), ("slicer.kappa_exe", self.kappa_exe)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::field(name, format!("must lie in (0, 1), got {v}")));
            }
        }
        if self.kappa_up + self.kappa_exe > 1.0 + 1e-12 {
            return Err(Error::field("slicer.kappa_up", "kappa_up + kappa_exe must not exceed 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionDemand {
    /// Hz.
    pub bandwidth: f64,
    /// Cycles per second.
    pub compute: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandVector {
    pub regions: Vec<RegionDemand>,
}

/// Per-region demand for `users[i]` predicted users.
pub fn estimate_demand(
    users: &[f64],
    profile: &TaskProfile,
    radio: &RadioParams,
    econ: &EconParams,
    split: &DeadlineSplit,
) -> Result<DemandVector> {
    let efficiency = radio.spectral_efficiency(profile.mean_distance);
    if !(efficiency > 0.0) || !efficiency.is_finite() {
        return Err(Error::InvalidInput(format!(
            "spectral efficiency {efficiency} at mean distance {}",
            profile.mean_distance
        )));
    }
    let t = econ.deadline;
    users
        .iter()
        .map(|&n| {
            if !(n >= 0.0) || !n.is_finite() {
                return Err(Error::InvalidInput(format!("forecast user count {n}")));
            }
            Ok(RegionDemand {
                bandwidth: n * profile.mean_data_size / (t * split.kappa_up * efficiency),
                compute: n * profile.mean_data_size * profile.mean_compute_density / (t * split.kappa_exe),
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(|regions| DemandVector { regions })
}

/// Relaxed rental choice: probability vectors over the options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFraction {
    pub bandwidth: Vec<f64>,
    pub vms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionalSlice {
    pub regions: Vec<RegionFraction>,
}

impl FractionalSlice {
    /// Expected rental cost under the fractional choice.
    pub fn objective(&self, catalog: &ResourceCatalog) -> f64 {
        self.regions
            .iter()
            .zip(&catalog.regions)
            .map(|(f, c)| {
                f.bandwidth.iter().zip(&c.bandwidth).map(|(a, o)| a * o.cost).sum::<f64>()
                    + f.vms.iter().zip(&c.vms).map(|(a, o)| a * o.cost).sum::<f64>()
            })
            .sum()
    }
}

/// `min sum a_k c_k` s.t. `sum a_k = 1`, `sum a_k cap_k >= demand`, `a >= 0`.
/// Optimal vertices put mass on one option or on two options straddling the
/// demand, so enumerating those is exact.
fn solve_one(
    caps: &[f64],
    costs: &[f64],
    demand: f64,
    region: usize,
    resource: &'static str,
) -> Result<Vec<f64>> {
    let max_cap = caps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !covers(max_cap, demand) {
        return Err(Error::InfeasibleSlice {
            region,
            resource,
            demand,
            capacity: max_cap,
            shortfall: demand - max_cap,
        });
    }
    let n = caps.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |cost: f64, alpha: Vec<f64>| {
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, alpha));
        }
    };
    for k in 0..n {
        if covers(caps[k], demand) {
            let mut alpha = vec![0.0; n];
            alpha[k] = 1.0;
            consider(costs[k], alpha);
        }
    }
    for lo in 0..n {
        for hi in 0..n {
            if caps[lo] < demand && caps[hi] > demand && !covers(caps[lo], demand) {
                let w = (demand - caps[lo]) / (caps[hi] - caps[lo]);
                let mut alpha = vec![0.0; n];
                alpha[hi] = w;
                alpha[lo] = 1.0 - w;
                consider((1.0 - w) * costs[lo] + w * costs[hi], alpha);
            }
        }
    }
    Ok(best.expect("a covering option exists").1)
}

pub fn solve_relaxed(demand: &DemandVector, catalog: &ResourceCatalog) -> Result<FractionalSlice> {
    if demand.regions.len() != catalog.regions.len() {
        return Err(Error::Shape(format!(
            "demand for {} regions, catalog for {}",
            demand.regions.len(),
            catalog.regions.len()
        )));
    }
    let regions = demand
        .regions
        .iter()
        .zip(&catalog.regions)
        .enumerate()
        .map(|(i, (d, c))| {
            let bw_caps: Vec<f64> = c.bandwidth.iter().map(|o| o.capacity).collect();
            let bw_costs: Vec<f64> = c.bandwidth.iter().map(|o| o.cost).collect();
            let vm_caps: Vec<f64> = (0..c.vms.len()).map(|k| c.vm_capacity(k)).collect();
            let vm_costs: Vec<f64> = c.vms.iter().map(|o| o.cost).collect();
            Ok(RegionFraction {
                bandwidth: solve_one(&bw_caps, &bw_costs, d.bandwidth, i, "bandwidth")?,
                vms: solve_one(&vm_caps, &vm_costs, d.compute, i, "compute")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FractionalSlice { regions })
}

fn round_one<R: Rng + ?Sized>(
    weights: &[f64],
    caps: &[f64],
    costs: &[f64],
    demand: f64,
    rng: &mut R,
) -> Result<usize> {
    let dist = WeightedIndex::new(weights)
        .map_err(|e| Error::InvalidInput(format!("fractional choice {weights:?}: {e}")))?;
    let k = dist.sample(rng);
    if covers(caps[k], demand) {
        return Ok(k);
    }
    (0..caps.len())
        .filter(|&j| covers(caps[j], demand))
        .min_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)))
        .ok_or_else(|| Error::InvalidInput(format!("no option covers demand {demand}")))
}

/// Samples each choice from its fractional vector; a sample that misses the
/// demand is replaced by the cheapest option that covers it.
pub fn randomized_round<R: Rng + ?Sized>(
    frac: &FractionalSlice,
    demand: &DemandVector,
    catalog: &ResourceCatalog,
    rng: &mut R,
) -> Result<SliceDecision> {
    let regions = frac
        .regions
        .iter()
        .zip(&demand.regions)
        .zip(&catalog.regions)
        .map(|((f, d), c)| {
            let bw_caps: Vec<f64> = c.bandwidth.iter().map(|o| o.capacity).collect();
            let bw_costs: Vec<f64> = c.bandwidth.iter().map(|o| o.cost).collect();
            let vm_caps: Vec<f64> = (0..c.vms.len()).map(|k| c.vm_capacity(k)).collect();
            let vm_costs: Vec<f64> = c.vms.iter().map(|o| o.cost).collect();
            let b = round_one(&f.bandwidth, &bw_caps, &bw_costs, d.bandwidth, rng)?;
            let v = round_one(&f.vms, &vm_caps, &vm_costs, d.compute, rng)?;
            Ok(RegionSlice::from_indices(b, c.bandwidth.len(), v, c.vms.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SliceDecision { regions })
}

/// Everything besides the history and predictor that slice adjustment needs.
#[derive(Debug, Clone)]
pub struct SlicerContext<'a> {
    pub catalog: &'a ResourceCatalog,
    pub profile: TaskProfile,
    pub radio: RadioParams,
    pub econ: EconParams,
    pub split: DeadlineSplit,
    /// Returned when the history is empty.
    pub fallback: Option<&'a SliceDecision>,
}

/// Forecast → demand → relaxed LP → rounding, for the next long slot.
pub fn adjust_slices<R: Rng + ?Sized>(
    history: &TrafficSeries,
    ctx: &SlicerContext<'_>,
    predictor: &dyn TrafficPredictor,
    rng: &mut R,
) -> Result<SliceDecision> {
    if history.is_empty() {
        return ctx
            .fallback
            .cloned()
            .ok_or_else(|| Error::InvalidInput("empty traffic history and no default slice".into()));
    }
    let forecast = predictor.predict(history, 1)?;
    let users: Vec<f64> = forecast.iter().map(|r| r[0]).collect();
    let demand = estimate_demand(&users, &ctx.profile, &ctx.radio, &ctx.econ, &ctx.split)?;
    let frac = solve_relaxed(&demand, ctx.catalog)?;
    randomized_round(&frac, &demand, ctx.catalog, rng)
}
