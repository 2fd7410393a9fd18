use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::Config;
use crate::agent::{AgentBundle, OffloadEnv};
use crate::baselines::{
    auction_policy, brute_force_offload, brute_force_slicing, greedy_policy, max_transaction_policy,
    PolicyContext,
};
use crate::env::{rented_and_cost, step, BandwidthOption, RegionCatalog, RegionState, ResourceCatalog, VmOption};
use crate::error::Result;
use crate::forecast::{PerfectForecast, TrafficSeries};
use crate::policy::{AgentPolicy, OffloadPolicy};
use crate::slicer::{adjust_slices, estimate_demand, SlicerContext};

/// Largest task count of a generated offloading instance.
pub const OFFLOAD_INSTANCE_TASKS: usize = 10;
/// Largest option count per resource of a generated slicing instance.
pub const SLICING_INSTANCE_OPTIONS: usize = 4;

pub fn policy_context(config: &Config) -> PolicyContext {
    PolicyContext {
        econ: config.econ,
        radio: config.radio,
        split: config.split,
    }
}

/// Region states with at most [`OFFLOAD_INSTANCE_TASKS`] tasks, taken along
/// greedy trajectories of the training environment so queues carry backlog.
pub fn offload_instances(config: &Config, count: usize, seed: u64) -> Result<Vec<RegionState>> {
    let mut spec = config.env_spec();
    spec.max_users_per_episode = spec.max_users_per_episode.min(OFFLOAD_INSTANCE_TASKS);
    spec.min_users = spec.min_users.min(spec.max_users_per_episode);
    let ctx = policy_context(config);
    let mut env = OffloadEnv::new(spec, seed, Vec::new())?;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let s = env.state().clone();
        let (_, done) = env.step(&greedy_policy(&s, &ctx))?;
        out.push(s);
        if done {
            env.reset()?;
        }
    }
    Ok(out)
}

/// One-slot revenue of the exhaustive search and of each heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffloadComparison {
    pub oracle: f64,
    pub greedy: f64,
    pub max_transaction: f64,
    pub auction: f64,
}

pub fn compare_offload(state: &RegionState, config: &Config) -> Result<OffloadComparison> {
    let ctx = policy_context(config);
    let revenue = |a| -> Result<f64> { Ok(step(state, &a, &config.econ, &config.radio, config.slot_duration)?.reward) };
    let (oracle, action) = brute_force_offload(state, &ctx)?;
    debug_assert_eq!(revenue(action)?, oracle);
    Ok(OffloadComparison {
        oracle,
        greedy: revenue(greedy_policy(state, &ctx))?,
        max_transaction: revenue(max_transaction_policy(state, &ctx))?,
        auction: revenue(auction_policy(state, &ctx))?,
    })
}

/// Instances where the agent's deterministic action earns at least
/// `fraction` of the exhaustive optimum.
pub fn agent_near_oracle(
    config: &Config,
    agent: &AgentBundle,
    states: &[RegionState],
    fraction: f64,
) -> Result<usize> {
    let ctx = policy_context(config);
    let mut policy = AgentPolicy::new(std::sync::Arc::new(agent.clone()), config.env_spec());
    let mut hits = 0;
    for state in states {
        let (oracle, _) = brute_force_offload(state, &ctx)?;
        let action = policy.act(state)?;
        let revenue = step(state, &action, &config.econ, &config.radio, config.slot_duration)?.reward;
        if revenue >= fraction * oracle {
            hits += 1;
        }
    }
    Ok(hits)
}

/// A random catalog of up to [`SLICING_INSTANCE_OPTIONS`] options per
/// resource with rising capacities and costs, plus true user counts it can
/// serve, for `regions` regions.
pub fn slicing_instance<R: Rng + ?Sized>(
    config: &Config,
    regions: usize,
    rng: &mut R,
) -> Result<(ResourceCatalog, Vec<f64>)> {
    let users: Vec<f64> = (0..regions)
        .map(|_| rng.random_range(0..=config.max_users) as f64)
        .collect();
    let demand = estimate_demand(&users, &config.tasks.profile(), &config.radio, &config.econ, &config.split)?;
    let peak = estimate_demand(
        &vec![config.max_users as f64; regions],
        &config.tasks.profile(),
        &config.radio,
        &config.econ,
        &config.split,
    )?;
    let frequency = 1e9;
    let catalog = ResourceCatalog {
        regions: (0..regions)
            .map(|i| {
                let bw = ladder(rng, peak.regions[i].bandwidth, demand.regions[i].bandwidth);
                let vm_need = demand.regions[i].compute / frequency;
                let vm_peak = (peak.regions[i].compute / frequency).ceil().max(1.0);
                let vms = ladder(rng, vm_peak, vm_need);
                let mut counts: Vec<usize> = vms.iter().map(|(c, _)| c.ceil().max(1.0) as usize).collect();
                for k in 1..counts.len() {
                    counts[k] = counts[k].max(counts[k - 1] + 1);
                }
                RegionCatalog {
                    bandwidth: bw
                        .into_iter()
                        .map(|(capacity, cost)| BandwidthOption { capacity, cost })
                        .collect(),
                    vms: counts
                        .into_iter()
                        .zip(vms)
                        .map(|(count, (_, cost))| VmOption { count, cost })
                        .collect(),
                    vm_frequency: frequency,
                }
            })
            .collect(),
    };
    catalog.validate()?;
    Ok((catalog, users))
}

/// Up to four `(capacity, cost)` options below `1.2 * scale` whose largest
/// capacity covers `need`; marginal prices vary by a factor of three.
fn ladder<R: Rng + ?Sized>(rng: &mut R, scale: f64, need: f64) -> Vec<(f64, f64)> {
    let k = rng.random_range(1..=SLICING_INSTANCE_OPTIONS);
    let mut caps: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.2) * scale).collect();
    caps.sort_by(f64::total_cmp);
    caps.dedup();
    let last = caps.len() - 1;
    if caps[last] < need * 1.05 {
        caps[last] = need * 1.05 + scale * 0.01;
    }
    let mut cost = 0.0;
    let mut prev = 0.0;
    caps.into_iter()
        .map(|c| {
            cost += (c - prev) / scale * 100.0 * rng.random_range(0.5..1.5);
            prev = c;
            (c, cost)
        })
        .collect()
}

/// Mean rental cost of `draws` slice adjustments that see the true next
/// counts, and the exhaustive optimum for the same demand.
pub fn slicing_gap<R: Rng + ?Sized>(
    config: &Config,
    catalog: &ResourceCatalog,
    users: &[f64],
    draws: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let profile = config.tasks.profile();
    let demand = estimate_demand(users, &profile, &config.radio, &config.econ, &config.split)?;
    let (optimum, _) = brute_force_slicing(&demand, catalog)?;
    let truth = TrafficSeries::new(users.iter().map(|&u| vec![u, u]).collect())?;
    let perfect = PerfectForecast { truth: truth.clone() };
    let ctx = SlicerContext {
        catalog,
        profile,
        radio: config.radio,
        econ: config.econ,
        split: config.split,
        fallback: None,
    };
    let history = truth.prefix(1);
    let mut total = 0.0;
    for _ in 0..draws {
        let decision = adjust_slices(&history, &ctx, &perfect, rng)?;
        total += rented_and_cost(catalog, &decision)?.cost;
    }
    Ok((total / draws.max(1) as f64, optimum))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub offload_instances: usize,
    /// Instances where some heuristic earned more than the exhaustive search.
    pub offload_violations: usize,
    pub slicing_instances: usize,
    /// Largest `expected cost / optimum - 1` seen.
    pub slicing_worst_gap: f64,
    /// Instances whose expected cost is within 10% of the optimum.
    pub slicing_within_tolerance: usize,
    /// Instances where a trained agent earns at least 85% of the optimum,
    /// when checked.
    pub agent_near_oracle: Option<usize>,
}

impl OracleSummary {
    pub fn passed(&self) -> bool {
        self.offload_violations == 0
            && self.slicing_within_tolerance == self.slicing_instances
            && self
                .agent_near_oracle
                .is_none_or(|n| n as f64 >= 0.7 * self.offload_instances as f64)
    }
}

/// Small-instance exactness checks of the heuristics against the
/// exhaustive offloading search and of slice adjustment against the
/// exhaustive slicing search; with an agent, also how often it comes within
/// 85% of the offloading optimum.
pub fn oracle_check(
    config: &Config,
    agent: Option<&AgentBundle>,
    instances: usize,
    draws: usize,
    seed: u64,
) -> Result<OracleSummary> {
    let states = offload_instances(config, instances, seed)?;
    let mut offload_violations = 0;
    for state in &states {
        let c = compare_offload(state, config)?;
        if c.greedy.max(c.max_transaction).max(c.auction) > c.oracle {
            offload_violations += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(5);
    let (mut worst, mut within) = (0.0f64, 0);
    for _ in 0..instances {
        let regions = rng.random_range(1..=config.regions.min(3));
        let (catalog, users) = slicing_instance(config, regions, &mut rng)?;
        let (mean, optimum) = slicing_gap(config, &catalog, &users, draws, &mut rng)?;
        let gap = if optimum > 0.0 { mean / optimum - 1.0 } else { 0.0 };
        worst = worst.max(gap);
        if gap <= 0.10 {
            within += 1;
        }
    }
    Ok(OracleSummary {
        offload_instances: instances,
        offload_violations,
        slicing_instances: instances,
        slicing_worst_gap: worst,
        slicing_within_tolerance: within,
        agent_near_oracle: agent
            .map(|a| agent_near_oracle(config, a, &states, 0.85))
            .transpose()?,
    })
}
