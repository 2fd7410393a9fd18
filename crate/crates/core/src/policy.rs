//! Offloading policies behind one trait, so the harness can pick them by name.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{agent_action, decode_action, encode_state, hybrid_action, AgentBundle, EnvSpec};
use crate::baselines::{
    auction_policy, brute_force_offload, greedy_policy, max_transaction_policy, PolicyContext,
    OFFLOAD_ORACLE_BOUND,
};
use crate::env::{step, AllocationAction, RegionState};
use crate::error::Result;

/// Maps the tasks of one region and short slot to an allocation.
pub trait OffloadPolicy: Send {
    fn name(&self) -> &str;

    fn act(&mut self, state: &RegionState) -> Result<AllocationAction>;
}

/// One of the packing heuristics.
pub struct Heuristic {
    name: &'static str,
    rule: fn(&RegionState, &PolicyContext) -> AllocationAction,
    ctx: PolicyContext,
}

impl Heuristic {
    pub fn greedy(ctx: PolicyContext) -> Self {
        Heuristic { name: "greedy", rule: greedy_policy, ctx }
    }

    pub fn max_transaction(ctx: PolicyContext) -> Self {
        Heuristic { name: "max_transaction", rule: max_transaction_policy, ctx }
    }

    pub fn auction(ctx: PolicyContext) -> Self {
        Heuristic { name: "auction", rule: auction_policy, ctx }
    }
}

impl OffloadPolicy for Heuristic {
    fn name(&self) -> &str {
        self.name
    }

    fn act(&mut self, state: &RegionState) -> Result<AllocationAction> {
        Ok((self.rule)(state, &self.ctx))
    }
}

/// Uniform raw action in `[0, 1]^(2 max_users)`, decoded like an agent's.
pub struct RandomPolicy {
    max_users: usize,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(max_users: usize, seed: u64) -> Self {
        RandomPolicy {
            max_users,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl OffloadPolicy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn act(&mut self, state: &RegionState) -> Result<AllocationAction> {
        let raw: Vec<f64> = (0..2 * self.max_users.max(state.tasks.len()))
            .map(|_| self.rng.random::<f64>())
            .collect();
        decode_action(&raw, state.vm_count(), state.tasks.len())
    }
}

/// Exhaustive search up to [`OFFLOAD_ORACLE_BOUND`] tasks; above it, the
/// heuristic action with the highest one-slot revenue.
pub struct OraclePolicy {
    ctx: PolicyContext,
    slot_duration: f64,
}

impl OraclePolicy {
    pub fn new(ctx: PolicyContext, slot_duration: f64) -> Self {
        OraclePolicy { ctx, slot_duration }
    }
}

impl OffloadPolicy for OraclePolicy {
    fn name(&self) -> &str {
        "oracle"
    }

    fn act(&mut self, state: &RegionState) -> Result<AllocationAction> {
        if state.tasks.len() <= OFFLOAD_ORACLE_BOUND {
            return Ok(brute_force_offload(state, &self.ctx)?.1);
        }
        let mut best: Option<(f64, AllocationAction)> = None;
        for rule in [greedy_policy, max_transaction_policy, auction_policy] {
            let a = rule(state, &self.ctx);
            let r = step(state, &a, &self.ctx.econ, &self.ctx.radio, self.slot_duration)?.reward;
            if best.as_ref().is_none_or(|(b, _)| r > *b) {
                best = Some((r, a));
            }
        }
        Ok(best.map(|(_, a)| a).unwrap_or_else(|| AllocationAction::idle(state.tasks.len())))
    }
}

/// Deterministic action of a trained agent.
pub struct AgentPolicy {
    agent: Arc<AgentBundle>,
    spec: EnvSpec,
}

impl AgentPolicy {
    pub fn new(agent: Arc<AgentBundle>, spec: EnvSpec) -> Self {
        AgentPolicy { agent, spec }
    }
}

impl OffloadPolicy for AgentPolicy {
    fn name(&self) -> &str {
        "sliceoff"
    }

    fn act(&mut self, state: &RegionState) -> Result<AllocationAction> {
        agent_action(&self.agent, &self.spec, state)
    }
}

/// Follows whichever of the two agents its critics value higher.
pub struct HybridPolicy {
    current: Arc<AgentBundle>,
    peer: Arc<AgentBundle>,
    spec: EnvSpec,
}

impl HybridPolicy {
    pub fn new(current: Arc<AgentBundle>, peer: Arc<AgentBundle>, spec: EnvSpec) -> Self {
        HybridPolicy { current, peer, spec }
    }
}

impl OffloadPolicy for HybridPolicy {
    fn name(&self) -> &str {
        "hybrid"
    }

    fn act(&mut self, state: &RegionState) -> Result<AllocationAction> {
        let s = encode_state(state, &self.spec.radio, &self.spec.econ, self.spec.max_users)?;
        let raw = hybrid_action(&self.current, &self.peer, &s)?;
        decode_action(&raw, state.vm_count(), state.tasks.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EconParams, RadioParams, TaskSpec};
    use crate::slicer::DeadlineSplit;

    fn ctx() -> PolicyContext {
        PolicyContext {
            econ: EconParams::default(),
            radio: RadioParams::default(),
            split: DeadlineSplit::default(),
        }
    }

    fn region(n: usize) -> RegionState {
        let mut s = RegionState::new(0, 4e6, 2, 1e9, 1, 10);
        s.tasks = (0..n)
            .map(|i| TaskSpec::new(i as u64, 1e6, 100.0, 1.0 + (i % 3) as f64, 30.0, 1).unwrap())
            .collect();
        s
    }

    #[test]
    fn random_policy_is_seeded_and_feasible() {
        let s = region(5);
        let mut a = RandomPolicy::new(8, 3);
        let mut b = RandomPolicy::new(8, 3);
        for _ in 0..20 {
            let x = a.act(&s).unwrap();
            assert_eq!(x, b.act(&s).unwrap());
            assert!(x.check(s.vm_count()).is_ok());
        }
    }

    #[test]
    fn oracle_beats_heuristics_and_falls_back_when_large() {
        let mut oracle = OraclePolicy::new(ctx(), 1.0);
        for n in [4, 14] {
            let s = region(n);
            let a = oracle.act(&s).unwrap();
            let best = step(&s, &a, &ctx().econ, &ctx().radio, 1.0).unwrap().reward;
            for mut h in [Heuristic::greedy(ctx()), Heuristic::max_transaction(ctx()), Heuristic::auction(ctx())] {
                let r = step(&s, &h.act(&s).unwrap(), &ctx().econ, &ctx().radio, 1.0).unwrap().reward;
                assert!(best >= r, "{} beat the oracle with {n} tasks", h.name());
            }
        }
    }
}
