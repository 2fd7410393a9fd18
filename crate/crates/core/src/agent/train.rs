use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{action_dim, decode_action, encode_state, state_dim, FeatureScale};
use super::replay::{ReplayBuffer, Transition};
use super::td3::{shape_actions, AgentBundle, AgentConfig};
use crate::env::{step, AllocationAction, EconParams, RadioParams, RegionState, ResourceCatalog};
use crate::error::{Error, Result};
use crate::neural::{checkpoint, Matrix};
use crate::scenario::TaskDistribution;
use crate::slicer::{estimate_demand, randomized_round, solve_relaxed, DeadlineSplit};

/// Distribution of single-region episodes the agents learn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub catalog: ResourceCatalog,
    pub tasks: TaskDistribution,
    /// Inclusive range of users per episode.
    pub min_users: usize,
    pub max_users_per_episode: usize,
    /// Width of the padded observation.
    pub max_users: usize,
    pub short_slots: usize,
    pub slot_duration: f64,
    pub econ: EconParams,
    pub radio: RadioParams,
    pub split: DeadlineSplit,
    /// The slice of an episode is rented for `N (1 + u)`, `u ~ U(-e, e)`.
    pub provision_error: f64,
}

impl EnvSpec {
    pub fn feature_scale(&self) -> FeatureScale {
        let bandwidth = self
            .catalog
            .regions
            .iter()
            .filter_map(|r| r.bandwidth.last().map(|o| o.capacity))
            .fold(0.0, f64::max);
        let vms = self
            .catalog
            .regions
            .iter()
            .filter_map(|r| r.vms.last().map(|o| o.count))
            .max()
            .unwrap_or(1) as f64;
        let vm_frequency = self
            .catalog
            .regions
            .iter()
            .map(|r| r.vm_frequency)
            .fold(0.0, f64::max);
        FeatureScale {
            bandwidth,
            vms,
            vm_frequency,
            max_priority: self.tasks.priority_weights.len() as f64,
            upload_power: self.radio.upload_power,
            deadline: self.econ.deadline,
        }
    }
}

/// Single-region offloading environment: every episode rents a slice for a
/// user population and runs `short_slots` decisions with fresh tasks.
#[derive(Debug, Clone)]
pub struct OffloadEnv {
    spec: EnvSpec,
    rng: ChaCha8Rng,
    region_order: Vec<usize>,
    episodes: usize,
    users: usize,
    next_id: u64,
    state: RegionState,
}

impl OffloadEnv {
    pub fn new(spec: EnvSpec, seed: u64, region_order: Vec<usize>) -> Result<Self> {
        if spec.catalog.regions.is_empty() {
            return Err(Error::InvalidInput("environment needs at least one region".into()));
        }
        if spec.min_users > spec.max_users_per_episode || spec.max_users_per_episode > spec.max_users {
            return Err(Error::InvalidInput(format!(
                "users per episode {}..={} must fit in {}",
                spec.min_users, spec.max_users_per_episode, spec.max_users
            )));
        }
        let order = if region_order.is_empty() {
            (0..spec.catalog.regions.len()).collect()
        } else {
            region_order
        };
        let mut env = OffloadEnv {
            state: RegionState::new(0, 0.0, 1, 1.0, 1, 1),
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
            region_order: order,
            episodes: 0,
            users: 0,
            next_id: 0,
        };
        env.reset()?;
        Ok(env)
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn state(&self) -> &RegionState {
        &self.state
    }

    /// Starts a new episode and returns its first state.
    pub fn reset(&mut self) -> Result<&RegionState> {
        let region = self.region_order[self.episodes % self.region_order.len()];
        self.episodes += 1;
        let spec = &self.spec;
        self.users = self.rng.random_range(spec.min_users..=spec.max_users_per_episode);
        let e = spec.provision_error;
        let u = if e > 0.0 { self.rng.random_range(-e..=e) } else { 0.0 };
        let planned = (self.users as f64 * (1.0 + u)).clamp(0.0, spec.max_users as f64);
        let one = ResourceCatalog {
            regions: vec![spec.catalog.regions[region].clone()],
        };
        let demand = estimate_demand(&[planned], &spec.tasks.profile(), &spec.radio, &spec.econ, &spec.split)?;
        let cat = &one.regions[0];
        let (b, v) = match solve_relaxed(&demand, &one) {
            Ok(frac) => randomized_round(&frac, &demand, &one, &mut self.rng)?.regions[0].indices(0)?,
            Err(Error::InfeasibleSlice { .. }) => (cat.bandwidth.len() - 1, cat.vms.len() - 1),
            Err(e) => return Err(e),
        };
        self.state = RegionState::new(
            region,
            cat.bandwidth[b].capacity,
            cat.vms[v].count,
            cat.vm_frequency,
            1,
            spec.short_slots,
        );
        self.fill_tasks();
        Ok(&self.state)
    }

    fn fill_tasks(&mut self) {
        let t = self.state.short_slot;
        self.state.tasks = (0..self.users)
            .map(|_| {
                self.next_id += 1;
                self.spec.tasks.sample(self.next_id, t, &mut self.rng)
            })
            .collect();
    }

    /// Applies `action`; returns the reward and whether the episode ended.
    /// The next state carries fresh tasks for the following short slot.
    pub fn step(&mut self, action: &AllocationAction) -> Result<(f64, bool)> {
        let out = step(&self.state, action, &self.spec.econ, &self.spec.radio, self.spec.slot_duration)?;
        let done = out.next.long_slot != self.state.long_slot;
        self.state = out.next;
        self.fill_tasks();
        Ok((out.reward, done))
    }

    /// Replaces the generator behind later episodes and task draws, leaving
    /// the current state as it is.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}

/// Discounted return of `policy` from the current state of `env` to the end
/// of its episode, over `rollouts` copies reseeded with `seed, seed + 1, ..`.
/// Returns the mean and its standard error.
pub fn rollout_value(
    env: &OffloadEnv,
    gamma: f64,
    rollouts: usize,
    seed: u64,
    policy: &mut dyn FnMut(&RegionState) -> Result<AllocationAction>,
) -> Result<(f64, f64)> {
    if rollouts == 0 {
        return Err(Error::InvalidInput("rollout_value needs at least one rollout".into()));
    }
    let mut returns = Vec::with_capacity(rollouts);
    for r in 0..rollouts {
        let mut sim = env.clone();
        sim.reseed(seed.wrapping_add(r as u64));
        let (mut total, mut discount) = (0.0, 1.0);
        loop {
            let action = policy(sim.state())?;
            let (reward, done) = sim.step(&action)?;
            total += discount * reward;
            discount *= gamma;
            if done {
                break;
            }
        }
        returns.push(total);
    }
    let n = rollouts as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = if rollouts > 1 {
        returns.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok((mean, (var / n).sqrt()))
}

/// Mean undiscounted episode reward of `policy` over `episodes` episodes of a
/// freshly seeded environment.
pub fn evaluate(
    spec: &EnvSpec,
    seed: u64,
    episodes: usize,
    policy: &mut dyn FnMut(&RegionState) -> Result<AllocationAction>,
) -> Result<f64> {
    let mut env = OffloadEnv::new(spec.clone(), seed, Vec::new())?;
    let mut total = 0.0;
    for ep in 0..episodes {
        if ep > 0 {
            env.reset()?;
        }
        loop {
            let action = policy(env.state())?;
            let (r, done) = env.step(&action)?;
            total += r;
            if done {
                break;
            }
        }
    }
    Ok(total / episodes.max(1) as f64)
}

/// Deterministic agent action for a region state.
pub fn agent_action(agent: &AgentBundle, spec: &EnvSpec, state: &RegionState) -> Result<AllocationAction> {
    let s = encode_state(state, &spec.radio, &spec.econ, spec.max_users)?;
    let raw = agent.policy(&agent.features(&s))?;
    decode_action(&raw, state.vm_count(), state.tasks.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub agent: String,
    pub episode: usize,
    pub step: u64,
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_objective: f64,
    pub eval_reward: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub current: AgentBundle,
    pub peer: AgentBundle,
    pub curves: Vec<CurveRow>,
    /// Set when a non-finite loss stopped training early.
    pub divergence: Option<String>,
}

#[derive(Default)]
struct Running {
    c1: f64,
    c2: f64,
    actor: f64,
    updates: usize,
    actor_updates: usize,
}

impl Running {
    fn row(&mut self, agent: &str, episode: usize, step: u64, eval_reward: f64) -> CurveRow {
        let n = self.updates.max(1) as f64;
        let row = CurveRow {
            agent: agent.to_string(),
            episode,
            step,
            critic1_loss: self.c1 / n,
            critic2_loss: self.c2 / n,
            actor_objective: self.actor / self.actor_updates.max(1) as f64,
            eval_reward,
        };
        *self = Running::default();
        row
    }
}

struct Learner {
    name: &'static str,
    agent: AgentBundle,
    env: OffloadEnv,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    running: Running,
}

impl Learner {
    fn interact(&mut self, spec: &EnvSpec, env_steps: u64) -> Result<()> {
        let scale = self.agent.config.reward_scale;
        let warmup = env_steps < self.agent.config.warmup_steps;
        let state = self.env.state().clone();
        let s = encode_state(&state, &spec.radio, &spec.econ, spec.max_users)?;
        let x = self.agent.features(&s);
        let raw: Vec<f64> = if warmup {
            let uniform: Vec<f64> = (0..self.agent.action_dim()).map(|_| self.rng.random::<f64>()).collect();
            shape_actions(&Matrix::row_vector(&uniform), &Matrix::row_vector(&x)).into_data()
        } else {
            self.agent.act_features(&x, true, &mut self.rng)?
        };
        let action = decode_action(&raw, state.vm_count(), state.tasks.len())?;
        let (reward, done) = self.env.step(&action)?;
        let s2 = encode_state(self.env.state(), &spec.radio, &spec.econ, spec.max_users)?;
        self.buffer.push(Transition {
            state: x,
            action: raw,
            reward: reward * scale,
            next_state: self.agent.features(&s2),
            // Episode ends are time limits, not terminal states.
            done: false,
        });
        if done {
            self.env.reset()?;
        }
        Ok(())
    }

    fn learn(&mut self, peer: &AgentBundle, env_steps: u64) -> Result<()> {
        let cfg = &self.agent.config;
        if env_steps < cfg.warmup_steps || self.buffer.len() < cfg.batch_size {
            return Ok(());
        }
        let out = self.agent.learn(&self.buffer, Some(peer), &mut self.rng)?;
        self.running.c1 += out.critic1;
        self.running.c2 += out.critic2;
        self.running.updates += 1;
        if let Some(a) = out.actor_objective {
            self.running.actor += a;
            self.running.actor_updates += 1;
        }
        Ok(())
    }
}

/// Trains the current and peer agents side by side. The peer sees regions in
/// reverse order and uses its own seeds; each learning step distills from the
/// other agent as it stands at that moment.
pub fn train(spec: &EnvSpec, config: &AgentConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let sd = state_dim(spec.max_users);
    let ad = action_dim(spec.max_users);
    let scale = spec.feature_scale();
    let regions = spec.catalog.regions.len();
    let mut learners = [
        Learner {
            name: "current",
            agent: AgentBundle::new(sd, ad, config.clone(), scale, config.seed)?,
            env: OffloadEnv::new(spec.clone(), config.seed ^ 0xe1, (0..regions).collect())?,
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0xa7),
            running: Running::default(),
        },
        Learner {
            name: "peer",
            agent: AgentBundle::new(sd, ad, config.clone(), scale, config.peer_seed)?,
            env: OffloadEnv::new(spec.clone(), config.peer_seed ^ 0xe1, (0..regions).rev().collect())?,
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            rng: ChaCha8Rng::seed_from_u64(config.peer_seed ^ 0xa7),
            running: Running::default(),
        },
    ];
    let eval_seed = config.seed ^ 0x5eed;
    let mut curves = Vec::new();
    let mut env_steps = 0u64;
    let mut divergence = None;

    'outer: for episode in 0..config.episodes {
        for _ in 0..spec.short_slots {
            for l in learners.iter_mut() {
                l.interact(spec, env_steps)?;
            }
            let (a, b) = learners.split_at_mut(1);
            let outcome = a[0]
                .learn(&b[0].agent, env_steps)
                .map_err(|e| (a[0].name, e))
                .and_then(|_| b[0].learn(&a[0].agent, env_steps).map_err(|e| (b[0].name, e)));
            match outcome {
                Ok(()) => {}
                Err((name, Error::Divergence(msg))) => {
                    divergence = Some(format!("{name}: {msg}"));
                    break 'outer;
                }
                Err((_, e)) => return Err(e),
            }
            env_steps += 1;
            for l in learners.iter_mut() {
                l.agent.noise_scale = config.exploration(env_steps);
            }
        }
        let last = episode + 1 == config.episodes;
        if config.eval_every > 0 && ((episode + 1) % config.eval_every == 0 || last) {
            for l in learners.iter_mut() {
                let agent = &l.agent;
                let reward = evaluate(spec, eval_seed, config.eval_episodes.max(1), &mut |s| {
                    agent_action(agent, spec, s)
                })?;
                let row = l.running.row(l.name, episode + 1, l.agent.step, reward);
                log::info!(
                    "{} episode {}: eval reward {:.2}, critic loss {:.4}",
                    row.agent,
                    row.episode,
                    row.eval_reward,
                    row.critic1_loss
                );
                curves.push(row);
            }
        }
    }
    let [current, peer] = learners;
    Ok(TrainOutcome {
        current: current.agent,
        peer: peer.agent,
        curves,
        divergence,
    })
}

pub fn save_agents(path: &Path, current: &AgentBundle, peer: &AgentBundle) -> Result<()> {
    let mut params = Vec::new();
    for (prefix, a) in [("current.", current), ("peer.", peer)] {
        params.extend(a.named_params().into_iter().map(|(n, m)| (format!("{prefix}{n}"), m)));
    }
    checkpoint::save(path, &params)
}

/// Restores parameters saved by [`save_agents`] into freshly built agents.
pub fn load_agents(path: &Path, spec: &EnvSpec, config: &AgentConfig) -> Result<(AgentBundle, AgentBundle)> {
    let params = checkpoint::load(path)?;
    let sd = state_dim(spec.max_users);
    let ad = action_dim(spec.max_users);
    let mut current = AgentBundle::new(sd, ad, config.clone(), spec.feature_scale(), config.seed)?;
    let mut peer = AgentBundle::new(sd, ad, config.clone(), spec.feature_scale(), config.peer_seed)?;
    current.load_params("current.", &params)?;
    peer.load_params("peer.", &params)?;
    current.noise_scale = config.explore_end;
    peer.noise_scale = config.explore_end;
    Ok((current, peer))
}
