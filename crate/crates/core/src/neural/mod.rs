//! Small differentiable building blocks shared by the forecaster and the agent.

mod adam;
pub mod checkpoint;
mod matrix;
mod network;
pub mod tape;

pub use adam::Adam;
pub use matrix::Matrix;
pub use network::{Activation, Dense, ForwardCache, Gradients, Network};
pub(crate) use network::find;
