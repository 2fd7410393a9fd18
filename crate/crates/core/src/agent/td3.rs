use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::slots::{
    actor_inputs, assemble, assemble_backward, choose_vms, critic_action_grad, critic_inputs, slot_count,
    SlotLayout, ACTOR_INPUT, ACTOR_OUTPUT, CRITIC_INPUT,
};
use super::features::{FeatureScale, StateVector, GLOBAL_FEATURES, USER_FEATURES};
use super::replay::{Batch, ReplayBuffer};
use crate::error::{Error, Result};
use crate::neural::{Activation, Matrix, Network};

/// Exponent cap for the distillation weight, keeping `exp` finite.
const MAX_CONFIDENCE_EXPONENT: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    /// Hidden layer widths shared by actor and critics.
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub tau: f64,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub explore_start: f64,
    pub explore_end: f64,
    /// Environment steps over which exploration decays linearly.
    pub explore_decay_steps: u64,
    /// Standard deviation of the target-policy smoothing noise.
    pub target_noise: f64,
    /// Smoothing noise is clipped to `[-noise_clip, noise_clip]`.
    pub noise_clip: f64,
    /// Confidence `alpha` in the distillation weight `exp(alpha xi)`.
    pub distill_alpha: f64,
    pub distill: bool,
    /// Uniformly random actions before learning starts.
    pub warmup_steps: u64,
    /// Multiplies environment rewards before they enter the replay buffer.
    pub reward_scale: f64,
    pub episodes: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seed: u64,
    pub peer_seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden: vec![64, 64],
            gamma: 0.5,
            tau: 0.005,
            critic_lr: 1e-3,
            actor_lr: 1e-3,
            batch_size: 64,
            buffer_capacity: 50_000,
            explore_start: 0.3,
            explore_end: 0.05,
            explore_decay_steps: 5_000,
            target_noise: 0.2,
            noise_clip: 0.5,
            distill_alpha: 1.0,
            distill: true,
            warmup_steps: 500,
            reward_scale: 0.01,
            episodes: 1500,
            eval_every: 50,
            eval_episodes: 20,
            seed: 11,
            peer_seed: 12,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("agent.gamma", self.gamma),
            ("agent.tau", self.tau),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::field(name, "must lie in [0, 1]"));
            }
        }
        let nonneg = [
            ("agent.critic_lr", self.critic_lr),
            ("agent.actor_lr", self.actor_lr),
            ("agent.explore_start", self.explore_start),
            ("agent.explore_end", self.explore_end),
            ("agent.target_noise", self.target_noise),
            ("agent.noise_clip", self.noise_clip),
            ("agent.distill_alpha", self.distill_alpha),
            ("agent.reward_scale", self.reward_scale),
        ];
        for (name, v) in nonneg {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::field(name, "must be finite and non-negative"));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::field("agent.hidden", "needs at least one positive width"));
        }
        if self.batch_size == 0 {
            return Err(Error::field("agent.batch_size", "must be positive"));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::field("agent.buffer_capacity", "must be positive"));
        }
        Ok(())
    }

    /// Exploration standard deviation after `steps` environment steps.
    pub fn exploration(&self, steps: u64) -> f64 {
        if self.explore_decay_steps == 0 {
            return self.explore_end;
        }
        let frac = (steps as f64 / self.explore_decay_steps as f64).min(1.0);
        self.explore_start + frac * (self.explore_end - self.explore_start)
    }
}

/// `r + gamma * min(q1, q2)`, with the bootstrap dropped on terminal steps.
pub fn min_target(reward: f64, q1: f64, q2: f64, gamma: f64, done: bool) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * q1.min(q2)
    }
}

/// Column of the validity mask of user `j` in normalized features.
fn mask_column(j: usize) -> usize {
    GLOBAL_FEATURES + USER_FEATURES * j + USER_FEATURES - 1
}

/// Zeroes the bandwidth shares of absent users and rescales the rest to sum
/// to at most one; VM positions pass through. Rows of `x` are actions in
/// `[0, 1]^(2 users)`, rows of `states` the matching features.
pub fn shape_actions(x: &Matrix, states: &Matrix) -> Matrix {
    let users = x.cols() / 2;
    let mut out = x.clone();
    for i in 0..x.rows() {
        let mut sum = 0.0;
        for j in 0..users {
            let v = x[(i, j)] * states[(i, mask_column(j))];
            out[(i, j)] = v;
            sum += v;
        }
        if sum > 1.0 {
            for j in 0..users {
                out[(i, j)] /= sum;
            }
        }
    }
    out
}

/// Backward pass of [`shape_actions`]: maps `d loss / d shaped` to
/// `d loss / d x`.
pub fn shape_actions_backward(x: &Matrix, states: &Matrix, upstream: &Matrix) -> Matrix {
    let users = x.cols() / 2;
    let shaped = shape_actions(x, states);
    let mut out = upstream.clone();
    for i in 0..x.rows() {
        let sum: f64 = (0..users).map(|j| x[(i, j)] * states[(i, mask_column(j))]).sum();
        let dot: f64 = (0..users).map(|j| upstream[(i, j)] * shaped[(i, j)]).sum();
        for j in 0..users {
            let m = states[(i, mask_column(j))];
            out[(i, j)] = if sum > 1.0 {
                m * (upstream[(i, j)] - dot) / sum
            } else {
                m * upstream[(i, j)]
            };
        }
    }
    out
}

fn check_finite(loss: f64, what: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Divergence(format!("{what} loss is {loss}")))
    }
}

/// Losses and flags from one learning step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub critic1: f64,
    pub critic2: f64,
    /// Mean `Q1(s, pi(s))` over the batch, when the actor was updated.
    pub actor_objective: Option<f64>,
    pub distill: Option<f64>,
}

/// Shared per-user actor, twin critics and their target copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentBundle {
    pub actor: Network,
    pub critic1: Network,
    pub critic2: Network,
    pub actor_target: Network,
    pub critic1_target: Network,
    pub critic2_target: Network,
    pub noise_scale: f64,
    /// Learning steps taken so far.
    pub step: u64,
    pub config: AgentConfig,
    pub scale: FeatureScale,
    users: usize,
}

/// Share rows from the shared per-user actor, positions left at zero.
fn actor_output(actor: &Network, states: &Matrix) -> Result<Matrix> {
    let layout = SlotLayout::of(states)?;
    assemble(&actor.forward_batch(&actor_inputs(states, &layout))?, &layout)
}

/// No exploration in [`choose_vms`].
const GREEDY_VMS: Option<(f64, &mut ChaCha8Rng)> = None;

impl AgentBundle {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        config: AgentConfig,
        scale: FeatureScale,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let users = slot_count(state_dim)?;
        if action_dim != 2 * users {
            return Err(Error::Shape(format!("{action_dim} actions for {users} users")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden: Vec<(usize, Activation)> =
            config.hidden.iter().map(|&w| (w, Activation::Relu)).collect();
        let with_head = |act: Activation, width: usize| {
            let mut layers = hidden.clone();
            layers.push((width, act));
            layers
        };
        let mut actor = Network::new(ACTOR_INPUT, &with_head(Activation::Sigmoid, ACTOR_OUTPUT), &mut rng)?;
        // Start near equal shares.
        if let Some(last) = actor.layers.last_mut() {
            last.weights.scale(0.1);
            last.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let critic_layers = with_head(Activation::Identity, 1);
        let critic1 = Network::new(CRITIC_INPUT, &critic_layers, &mut rng)?;
        let critic2 = Network::new(CRITIC_INPUT, &critic_layers, &mut rng)?;
        Ok(AgentBundle {
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            noise_scale: config.explore_start,
            step: 0,
            config,
            scale,
            users,
        })
    }

    pub fn state_dim(&self) -> usize {
        GLOBAL_FEATURES + USER_FEATURES * self.users
    }

    pub fn action_dim(&self) -> usize {
        2 * self.users
    }

    pub fn features(&self, s: &StateVector) -> Vec<f64> {
        self.scale.normalize(s)
    }

    /// Deterministic policy output for network-ready features.
    pub fn policy(&self, features: &[f64]) -> Result<Vec<f64>> {
        let states = Matrix::row_vector(features);
        Ok(self.policy_batch(&states)?.into_data())
    }

    /// `pi(s)` row by row: actor shares through [`shape_actions`], then VMs
    /// chosen by the first critic.
    pub fn policy_batch(&self, states: &Matrix) -> Result<Matrix> {
        let mut a = shape_actions(&actor_output(&self.actor, states)?, states);
        self.place(&self.critic1, states, &mut a, GREEDY_VMS)?;
        Ok(a)
    }

    fn place<R: Rng + ?Sized>(
        &self,
        critic: &Network,
        states: &Matrix,
        actions: &mut Matrix,
        explore: Option<(f64, &mut R)>,
    ) -> Result<()> {
        let layout = SlotLayout::of(states)?;
        choose_vms(critic, states, actions, &layout, self.scale.vms, explore)
    }

    /// `pi(s)`; when exploring, shares get clamped Gaussian noise of scale
    /// `noise_scale` and each user takes a random VM with that probability.
    pub fn act<R: Rng + ?Sized>(&self, s: &StateVector, explore: bool, rng: &mut R) -> Result<Vec<f64>> {
        self.act_features(&self.features(s), explore, rng)
    }

    pub fn act_features<R: Rng + ?Sized>(&self, x: &[f64], explore: bool, rng: &mut R) -> Result<Vec<f64>> {
        if !explore || self.noise_scale <= 0.0 {
            return self.policy(x);
        }
        let states = Matrix::row_vector(x);
        let mut a = actor_output(&self.actor, &states)?;
        let noise = Normal::new(0.0, self.noise_scale)
            .map_err(|e| Error::InvalidInput(format!("exploration noise: {e}")))?;
        let users = self.users;
        for v in &mut a.data_mut()[..users] {
            *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
        }
        let mut a = shape_actions(&a, &states);
        self.place(&self.critic1, &states, &mut a, Some((self.noise_scale, rng)))?;
        Ok(a.into_data())
    }

    /// Smoothed target shares `clamp(pi'(s') + clip(eps, -c, c), 0, 1)`,
    /// shaped like every executed action, with VMs chosen by the first
    /// target critic.
    pub fn target_actions<R: Rng + ?Sized>(&self, next_states: &Matrix, rng: &mut R) -> Result<Matrix> {
        let mut a = shape_actions(&actor_output(&self.actor_target, next_states)?, next_states);
        let c = self.config.noise_clip;
        if self.config.target_noise > 0.0 {
            let noise = Normal::new(0.0, self.config.target_noise)
                .map_err(|e| Error::InvalidInput(format!("target noise: {e}")))?;
            for i in 0..a.rows() {
                for j in 0..self.users {
                    a[(i, j)] = (a[(i, j)] + noise.sample(rng).clamp(-c, c)).clamp(0.0, 1.0);
                }
            }
            a = shape_actions(&a, next_states);
        }
        self.place(&self.critic1_target, next_states, &mut a, GREEDY_VMS)?;
        Ok(a)
    }

    /// `Q(s, a)` of one critic network: its per-user scores summed over
    /// present users.
    pub fn q_values(&self, critic: &Network, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        let layout = SlotLayout::of(states)?;
        let x = critic_inputs(states, actions, &layout, self.scale.vms)?;
        Ok(layout.sum_rows(critic.forward_batch(&x)?.data()))
    }

    /// Target critic pair evaluated at `(states, actions)`.
    pub fn target_q(&self, states: &Matrix, actions: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((
            self.q_values(&self.critic1_target, states, actions)?,
            self.q_values(&self.critic2_target, states, actions)?,
        ))
    }

    pub fn td_target<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Result<Vec<f64>> {
        let next_actions = self.target_actions(&batch.next_states, rng)?;
        let (q1, q2) = self.target_q(&batch.next_states, &next_actions)?;
        Ok((0..batch.len())
            .map(|i| min_target(batch.rewards[i], q1[i], q2[i], self.config.gamma, batch.dones[i]))
            .collect())
    }

    /// One Adam step per critic on `mean (Q_i(s, a) - y)^2`. Returns both losses
    /// measured before the step.
    pub fn update_critics(&mut self, batch: &Batch, targets: &[f64]) -> Result<(f64, f64)> {
        let layout = SlotLayout::of(&batch.states)?;
        let x = critic_inputs(&batch.states, &batch.actions, &layout, self.scale.vms)?;
        let k = batch.len() as f64;
        let lr = self.config.critic_lr;
        let mut losses = [0.0; 2];
        for (idx, critic) in [&mut self.critic1, &mut self.critic2].into_iter().enumerate() {
            let cache = critic.forward_cached(&x)?;
            let q = layout.sum_rows(cache.output().data());
            let loss = q.iter().zip(targets).map(|(q, y)| (q - y).powi(2)).sum::<f64>() / k;
            losses[idx] = check_finite(loss, "critic")?;
            let upstream: Vec<f64> = q.iter().zip(targets).map(|(q, y)| 2.0 * (q - y) / k).collect();
            let grads = critic.backward(&cache, &layout.spread_rows(&upstream))?;
            critic.apply_gradients(&grads, lr)?;
        }
        Ok((losses[0], losses[1]))
    }

    /// Mean `Q1(s, pi(s))` over `states`.
    pub fn actor_objective(&self, states: &Matrix) -> Result<f64> {
        let a = self.policy_batch(states)?;
        let q = self.q_values(&self.critic1, states, &a)?;
        Ok(q.iter().sum::<f64>() / states.rows() as f64)
    }

    /// Gradient ascent on `mean Q1(s, pi(s))`, applied only on even step
    /// counters. Returns whether the actor changed.
    pub fn update_actor(&mut self, batch: &Batch) -> Result<bool> {
        if self.step % 2 != 0 {
            return Ok(false);
        }
        let k = batch.len() as f64;
        let layout = SlotLayout::of(&batch.states)?;
        let actor_cache = self.actor.forward_cached(&actor_inputs(&batch.states, &layout))?;
        let raw = assemble(actor_cache.output(), &layout)?;
        let mut shaped = shape_actions(&raw, &batch.states);
        choose_vms(&self.critic1, &batch.states, &mut shaped, &layout, self.scale.vms, GREEDY_VMS)?;
        let x = critic_inputs(&batch.states, &shaped, &layout, self.scale.vms)?;
        let critic_cache = self.critic1.forward_cached(&x)?;
        check_finite(critic_cache.output().data().iter().sum::<f64>(), "actor")?;
        let ascent = Matrix::filled(layout.slots.len(), 1, -1.0 / k);
        let dq = self.critic1.backward(&critic_cache, &ascent)?.input;
        let da = critic_action_grad(&dq, &layout);
        let da = shape_actions_backward(&raw, &batch.states, &da);
        let grads = self.actor.backward(&actor_cache, &assemble_backward(&da, &layout))?;
        self.actor.apply_gradients(&grads, self.config.actor_lr)?;
        Ok(true)
    }

    /// Polyak averaging of all three target networks.
    pub fn soft_update_targets(&mut self) -> Result<()> {
        let tau = self.config.tau;
        self.actor_target.soft_update(&self.actor, tau)?;
        self.critic1_target.soft_update(&self.critic1, tau)?;
        self.critic2_target.soft_update(&self.critic2, tau)
    }

    /// `V(s) = min(Q1, Q2)(s, pi(s))` under this agent's own networks.
    pub fn value(&self, states: &Matrix) -> Result<Vec<f64>> {
        let a = self.policy_batch(states)?;
        let q1 = self.q_values(&self.critic1, states, &a)?;
        let q2 = self.q_values(&self.critic2, states, &a)?;
        Ok(q1.iter().zip(&q2).map(|(a, b)| a.min(*b)).collect())
    }

    /// One actor step on `mean 1/2 |pi(s) - pi~(s)|^2 exp(alpha xi(s))` over
    /// the bandwidth shares, where `xi` is the peer's advantage. Peer actions
    /// and weights are constants. Returns the loss before the step.
    pub fn distill(&mut self, peer: &AgentBundle, batch: &Batch) -> Result<f64> {
        let xi = advantage(peer, self, &batch.states)?;
        let peer_actions = peer.policy_batch(&batch.states)?;
        let layout = SlotLayout::of(&batch.states)?;
        let cache = self.actor.forward_cached(&actor_inputs(&batch.states, &layout))?;
        let raw = assemble(cache.output(), &layout)?;
        let own = &shape_actions(&raw, &batch.states);
        let k = batch.len() as f64;
        let alpha = self.config.distill_alpha;
        let mut loss = 0.0;
        let mut upstream = Matrix::zeros(own.rows(), own.cols());
        for i in 0..own.rows() {
            let w = (alpha * xi[i]).min(MAX_CONFIDENCE_EXPONENT).exp();
            let mut sq = 0.0;
            for j in 0..self.users {
                let d = own[(i, j)] - peer_actions[(i, j)];
                sq += d * d;
                upstream[(i, j)] = w * d / k;
            }
            loss += 0.5 * sq * w / k;
        }
        check_finite(loss, "distillation")?;
        let upstream = shape_actions_backward(&raw, &batch.states, &upstream);
        let grads = self.actor.backward(&cache, &assemble_backward(&upstream, &layout))?;
        self.actor.apply_gradients(&grads, self.config.actor_lr)?;
        Ok(loss)
    }

    /// One learning step of the delayed twin-critic scheme: critics every
    /// call; actor, distillation from `peer` and target updates on even
    /// counters. The counter then advances.
    pub fn learn<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        peer: Option<&AgentBundle>,
        rng: &mut R,
    ) -> Result<StepLosses> {
        let batch = buffer.sample(self.config.batch_size, rng)?;
        let targets = self.td_target(&batch, rng)?;
        let (critic1, critic2) = self.update_critics(&batch, &targets)?;
        let mut out = StepLosses {
            critic1,
            critic2,
            ..StepLosses::default()
        };
        if self.update_actor(&batch)? {
            out.actor_objective = Some(self.actor_objective(&batch.states)?);
            if let (Some(peer), true) = (peer, self.config.distill) {
                out.distill = Some(self.distill(peer, &batch)?);
            }
            self.soft_update_targets()?;
        }
        self.step += 1;
        Ok(out)
    }

    pub fn named_params(&self) -> Vec<(String, Matrix)> {
        let mut out = Vec::new();
        for (prefix, net) in self.networks() {
            out.extend(
                net.named_params()
                    .into_iter()
                    .map(|(n, m)| (format!("{prefix}.{n}"), m)),
            );
        }
        out
    }

    pub fn load_params(&mut self, prefix: &str, params: &[(String, Matrix)]) -> Result<()> {
        let nets: [(&str, &mut Network); 6] = [
            ("actor", &mut self.actor),
            ("critic1", &mut self.critic1),
            ("critic2", &mut self.critic2),
            ("actor_target", &mut self.actor_target),
            ("critic1_target", &mut self.critic1_target),
            ("critic2_target", &mut self.critic2_target),
        ];
        for (name, net) in nets {
            net.load_params(&format!("{prefix}{name}."), params)?;
        }
        Ok(())
    }

    fn networks(&self) -> [(&'static str, &Network); 6] {
        [
            ("actor", &self.actor),
            ("critic1", &self.critic1),
            ("critic2", &self.critic2),
            ("actor_target", &self.actor_target),
            ("critic1_target", &self.critic1_target),
            ("critic2_target", &self.critic2_target),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.networks().iter().all(|(_, n)| n.is_finite())
    }
}

/// `xi(s) = V_peer(s) - V_current(s)`, each value from its own critics.
pub fn advantage(peer: &AgentBundle, current: &AgentBundle, states: &Matrix) -> Result<Vec<f64>> {
    let vp = peer.value(states)?;
    let vc = current.value(states)?;
    Ok(vp.iter().zip(&vc).map(|(p, c)| p - c).collect())
}

/// Follows the peer where its advantage is positive, the current policy
/// elsewhere.
pub fn hybrid_action(current: &AgentBundle, peer: &AgentBundle, s: &StateVector) -> Result<Vec<f64>> {
    let x = current.features(s);
    let states = Matrix::row_vector(&x);
    let xi = advantage(peer, current, &states)?[0];
    if xi > 0.0 {
        peer.policy(&peer.features(s))
    } else {
        current.policy(&x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::replay::Transition;
    use crate::agent::slots::vm_position;

    const USERS: usize = 2;

    fn scale() -> FeatureScale {
        FeatureScale {
            bandwidth: 1e7,
            vms: 4.0,
            vm_frequency: 1e9,
            max_priority: 3.0,
            upload_power: 1.0,
            deadline: 1.0,
        }
    }

    fn agent(config: AgentConfig, seed: u64) -> AgentBundle {
        let dim = GLOBAL_FEATURES + USER_FEATURES * USERS;
        AgentBundle::new(dim, 2 * USERS, config, scale(), seed).unwrap()
    }

    /// Normalized state with two VMs and the given users present.
    fn state(users: &[[f64; 3]]) -> Vec<f64> {
        let mut row = vec![0.0; GLOBAL_FEATURES + USER_FEATURES * USERS];
        row[0] = 0.5;
        row[1] = 0.5;
        for (j, u) in users.iter().enumerate() {
            let at = GLOBAL_FEATURES + USER_FEATURES * j;
            row[at..at + USER_FEATURES].copy_from_slice(&[u[0], u[1], u[2], 1.0]);
        }
        row
    }

    /// Zero weights everywhere and `value` as the output bias, so every
    /// network row outputs `act(value)`.
    fn constant(net: &mut Network, value: f64) {
        for layer in &mut net.layers {
            layer.weights.data_mut().iter_mut().for_each(|w| *w = 0.0);
            layer.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        net.layers.last_mut().unwrap().bias[0] = value;
    }

    fn batch(states: &[Vec<f64>], rewards: &[f64]) -> Batch {
        let items: Vec<Transition> = states
            .iter()
            .zip(rewards)
            .map(|(s, &r)| Transition {
                state: s.clone(),
                action: vec![0.25, 0.25, 0.25, 0.75],
                reward: r,
                next_state: s.clone(),
                done: false,
            })
            .collect();
        Batch::from_transitions(&items.iter().collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn min_rule_takes_the_smaller_target_critic() {
        assert_eq!(min_target(1.0, 5.4, 6.0, 0.5, false), 3.7);
        assert_eq!(min_target(1.0, 6.0, 5.4, 0.5, false), 3.7);
        assert_eq!(min_target(1.0, 5.4, 6.0, 0.5, true), 1.0);
    }

    #[test]
    fn td_target_uses_min_of_target_critics() {
        let mut a = agent(AgentConfig { gamma: 0.5, ..AgentConfig::default() }, 1);
        constant(&mut a.critic1_target, 3.0);
        constant(&mut a.critic2_target, 2.0);
        let b = batch(&[state(&[[0.3, 0.2, 0.5]]), state(&[[0.3, 0.2, 0.5], [0.1, 0.1, 1.0]])], &[1.0, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // Per-user scores sum over present users: one user, then two.
        assert_eq!(a.td_target(&b, &mut rng).unwrap(), vec![1.0 + 0.5 * 2.0, 0.5 + 0.5 * 4.0]);
    }

    #[test]
    fn target_smoothing_noise_is_clipped() {
        let config = AgentConfig {
            target_noise: 100.0,
            noise_clip: 0.125,
            ..AgentConfig::default()
        };
        let mut a = agent(config, 2);
        constant(&mut a.actor_target, 0.0);
        let states = Matrix::from_rows(&vec![state(&[[0.3, 0.2, 0.5]]); 200]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = a.target_actions(&states, &mut rng).unwrap();
        let shares: Vec<f64> = (0..t.rows()).map(|i| t[(i, 0)]).collect();
        assert!(shares.iter().all(|&s| (0.375..=0.625).contains(&s)));
        assert!(shares.contains(&0.375) && shares.contains(&0.625));
        assert!((0..t.rows()).all(|i| t[(i, 1)] == 0.0));
    }

    #[test]
    fn actor_and_targets_move_only_on_even_steps() {
        let mut a = agent(AgentConfig { batch_size: 4, ..AgentConfig::default() }, 3);
        let mut buffer = ReplayBuffer::new(16).unwrap();
        for k in 0..8 {
            let s = state(&[[0.3, 0.2, 0.5], [0.2 + 0.05 * k as f64, 0.4, 1.0]]);
            buffer.push(Transition {
                state: s.clone(),
                action: vec![0.25, 0.5, 0.25, 0.75],
                reward: k as f64,
                next_state: s,
                done: false,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for step in 0..4u64 {
            let before = a.clone();
            let out = a.learn(&buffer, None, &mut rng).unwrap();
            assert_eq!(a.step, step + 1);
            assert_ne!(a.critic1, before.critic1);
            assert_ne!(a.critic2, before.critic2);
            let even = step % 2 == 0;
            assert_eq!(out.actor_objective.is_some(), even);
            assert_eq!(a.actor != before.actor, even);
            assert_eq!(a.actor_target != before.actor_target, even);
            assert_eq!(a.critic1_target != before.critic1_target, even);
            assert_eq!(a.critic2_target != before.critic2_target, even);
        }
    }

    #[test]
    fn soft_update_blends_every_target() {
        let mut a = agent(AgentConfig { tau: 0.25, ..AgentConfig::default() }, 4);
        for net in [&mut a.actor, &mut a.critic1, &mut a.critic2] {
            constant(net, 1.0);
        }
        for net in [&mut a.actor_target, &mut a.critic1_target, &mut a.critic2_target] {
            constant(net, -3.0);
        }
        a.soft_update_targets().unwrap();
        for net in [&a.actor_target, &a.critic1_target, &a.critic2_target] {
            assert_eq!(net.layers.last().unwrap().bias[0], 0.25 * 1.0 + 0.75 * -3.0);
            assert!(net.layers[0].weights.data().iter().all(|&w| w == 0.0));
        }
    }

    fn with_values(seed: u64, share: f64, q1: f64, q2: f64) -> AgentBundle {
        let mut a = agent(AgentConfig::default(), seed);
        // Sigmoid output `share` needs bias logit(share).
        constant(&mut a.actor, (share / (1.0 - share)).ln());
        constant(&mut a.critic1, q1);
        constant(&mut a.critic2, q2);
        a
    }

    #[test]
    fn advantage_is_antisymmetric() {
        let states = Matrix::from_rows(&[state(&[[0.3, 0.2, 0.5]]), state(&[[0.3, 0.2, 0.5], [0.1, 0.1, 1.0]])]).unwrap();
        let a = agent(AgentConfig::default(), 5);
        let b = agent(AgentConfig::default(), 6);
        let ab = advantage(&a, &b, &states).unwrap();
        let ba = advantage(&b, &a, &states).unwrap();
        assert!(ab.iter().zip(&ba).all(|(x, y)| *x == -*y));
        let c = with_values(7, 0.5, 2.0, 1.5);
        let d = with_values(8, 0.5, 1.0, 4.0);
        assert_eq!(advantage(&c, &d, &states).unwrap(), vec![0.5, 1.0]);
    }

    #[test]
    fn distillation_weight_and_cap() {
        let states = vec![state(&[[0.3, 0.2, 0.5]])];
        let b = batch(&states, &[0.0]);
        for (alpha, peer_value, exponent) in [(0.0, 5.0, 0.0f64), (1.0, 1.5, 0.5), (1.0, 500.0, 30.0)] {
            let mut own = with_values(9, 0.5, 1.0, 1.0);
            own.config.distill_alpha = alpha;
            let peer = with_values(10, 0.75, peer_value, peer_value);
            let loss = own.distill(&peer, &b).unwrap();
            let expected = 0.5 * (0.5f64 - 0.75).powi(2) * exponent.exp();
            assert!((loss - expected).abs() <= 1e-12 * expected, "{alpha} {peer_value}: {loss} vs {expected}");
        }
        let mut own = with_values(9, 0.5, 1.0, 1.0);
        let twin = own.clone();
        assert_eq!(own.distill(&twin, &b).unwrap(), 0.0);
        assert_eq!(own.actor.layers, twin.actor.layers);
    }

    #[test]
    fn hybrid_follows_positive_advantage() {
        let s = StateVector {
            max_users: USERS,
            values: {
                let mut v = vec![0.0; GLOBAL_FEATURES + USER_FEATURES * USERS];
                v[0] = 5e6;
                v[1] = 2.0;
                v[GLOBAL_FEATURES..GLOBAL_FEATURES + USER_FEATURES].copy_from_slice(&[1e6, 2e8, 2.0, 1.0]);
                v
            },
        };
        let current = with_values(11, 0.25, 1.0, 1.0);
        let better = with_values(12, 0.75, 2.0, 2.0);
        let worse = with_values(13, 0.75, 0.5, 0.5);
        let x = current.features(&s);
        assert_eq!(hybrid_action(&current, &better, &s).unwrap(), better.policy(&x).unwrap());
        assert_eq!(hybrid_action(&current, &worse, &s).unwrap(), current.policy(&x).unwrap());
        let tie = with_values(14, 0.75, 1.0, 1.0);
        assert_eq!(hybrid_action(&current, &tie, &s).unwrap(), current.policy(&x).unwrap());
    }

    #[test]
    fn action_gradient_matches_finite_differences() {
        let a = agent(AgentConfig::default(), 15);
        let states = Matrix::from_rows(&[
            state(&[[0.3, 0.2, 0.5], [0.4, 0.6, 1.0]]),
            state(&[[0.7, 0.1, 0.5]]),
        ])
        .unwrap();
        let actions = Matrix::from_rows(&[
            vec![0.3, 0.5, vm_position(1, 2), vm_position(1, 2)],
            vec![0.6, 0.0, vm_position(0, 2), 0.0],
        ])
        .unwrap();
        let layout = SlotLayout::of(&states).unwrap();
        let x = critic_inputs(&states, &actions, &layout, a.scale.vms).unwrap();
        let cache = a.critic1.forward_cached(&x).unwrap();
        let ones = Matrix::filled(layout.slots.len(), 1, 1.0);
        let g = critic_action_grad(&a.critic1.backward(&cache, &ones).unwrap().input, &layout);
        let h = 1e-5;
        for (i, j) in [(0, 0), (0, 1), (1, 0)] {
            let q = |d: f64| {
                let mut p = actions.clone();
                p[(i, j)] += d;
                a.q_values(&a.critic1, &states, &p).unwrap()[i]
            };
            let fd = (q(h) - q(-h)) / (2.0 * h);
            assert!((fd - g[(i, j)]).abs() <= 1e-6 * (1.0 + fd.abs()), "({i}, {j}): {fd} vs {}", g[(i, j)]);
        }
    }

    #[test]
    fn shape_backward_matches_finite_differences() {
        let states = Matrix::from_rows(&[state(&[[0.3, 0.2, 0.5], [0.4, 0.6, 1.0]]), state(&[[0.7, 0.1, 0.5]])]).unwrap();
        let x = Matrix::from_rows(&[vec![0.8, 0.7, 0.1, 0.9], vec![0.6, 0.9, 0.2, 0.3]]).unwrap();
        let w = Matrix::from_rows(&[vec![1.0, -2.0, 0.5, 0.3], vec![0.7, 0.4, -1.0, 2.0]]).unwrap();
        let loss = |x: &Matrix| -> f64 {
            shape_actions(x, &states).data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };
        let g = shape_actions_backward(&x, &states, &w);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..4 {
                let mut p = x.clone();
                p[(i, j)] += h;
                let mut m = x.clone();
                m[(i, j)] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                assert!((fd - g[(i, j)]).abs() < 1e-8, "({i}, {j}): {fd} vs {}", g[(i, j)]);
            }
        }
    }

    #[test]
    fn exploration_is_centred_on_the_policy() {
        let mut a = agent(AgentConfig::default(), 16);
        constant(&mut a.actor, 0.0);
        let x = state(&[[0.3, 0.2, 0.5]]);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let greedy = a.act_features(&x, false, &mut rng).unwrap();
        assert_eq!(greedy, a.act_features(&x, false, &mut rng).unwrap());
        a.noise_scale = 0.0;
        assert_eq!(a.act_features(&x, true, &mut rng).unwrap(), greedy);
        a.noise_scale = 0.1;
        let draws = 1000;
        let mean = (0..draws)
            .map(|_| a.act_features(&x, true, &mut rng).unwrap()[0])
            .sum::<f64>()
            / draws as f64;
        assert!((mean - greedy[0]).abs() < 3.0 * 0.1 / (draws as f64).sqrt());
    }

    #[test]
    fn constructor_checks_dimensions() {
        let dim = GLOBAL_FEATURES + USER_FEATURES * USERS;
        assert!(AgentBundle::new(dim, 2 * USERS + 1, AgentConfig::default(), scale(), 0).is_err());
        assert!(AgentBundle::new(dim + 1, 2 * USERS, AgentConfig::default(), scale(), 0).is_err());
        let a = agent(AgentConfig::default(), 0);
        assert_eq!((a.state_dim(), a.action_dim()), (dim, 2 * USERS));
    }
}
