//! Twin-critic deterministic policy-gradient offloading agents trained in
//! pairs with mutual, advantage-weighted policy distillation.

mod features;
mod replay;
mod slots;
mod td3;
mod train;

pub use features::{
    action_dim, decode_action, encode_state, state_dim, FeatureScale, StateVector, BACKLOG_START,
    GLOBAL_FEATURES, USER_FEATURES, VM_SLOTS,
};
pub use slots::{vm_position, SlotLayout, ACTOR_INPUT, ACTOR_OUTPUT, CRITIC_INPUT};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use td3::{
    advantage, hybrid_action, min_target, shape_actions, shape_actions_backward, AgentBundle, AgentConfig,
    StepLosses,
};
pub use train::{
    agent_action, evaluate, load_agents, rollout_value, save_agents, train, CurveRow, EnvSpec, OffloadEnv,
    TrainOutcome,
};
