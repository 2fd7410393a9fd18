pub mod agent;
pub mod baselines;
pub mod env;
pub mod error;
pub mod forecast;
pub mod harness;
pub mod neural;
pub mod policy;
pub mod scenario;
pub mod slicer;

pub use error::{Error, Result};
